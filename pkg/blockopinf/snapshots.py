"""Snapshot data model, binary container I/O, lifting and shift/scale preprocessing."""

import csv
import io
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import orjson

from .errors import (
    DegenerateError,
    DomainError,
    FormatError,
    InvalidDimensionError,
    ShapeError,
    TruncationError,
)

logger = logging.getLogger(__name__)

MAGIC = b"OPIF"
VERSION = 1
DENSITY = "density"
SPECIFIC_VOLUME = "specific-volume"

PathLike = Union[str, Path]


@dataclass(frozen=True)
class VariableLayout:
    """Ordered (name, size) row groups of a snapshot matrix."""

    groups: Tuple[Tuple[str, int], ...]

    def __post_init__(self):
        groups = tuple((str(name), int(size)) for name, size in self.groups)
        names = [name for name, _ in groups]
        if not groups:
            raise InvalidDimensionError("layout needs at least one group")
        if len(set(names)) != len(names):
            raise ShapeError(f"duplicate group names in layout: {names}")
        for name, size in groups:
            if size <= 0:
                raise InvalidDimensionError(f"group '{name}' has nonpositive size {size}")
        object.__setattr__(self, "groups", groups)

    @classmethod
    def single(cls, name: str, size: int) -> "VariableLayout":
        return cls(((name, size),))

    @property
    def names(self) -> List[str]:
        return [name for name, _ in self.groups]

    @property
    def n(self) -> int:
        return sum(size for _, size in self.groups)

    def slice(self, name: str) -> slice:
        start = 0
        for gname, size in self.groups:
            if gname == name:
                return slice(start, start + size)
            start += size
        raise KeyError(f"no group named '{name}' in layout {self.names}")

    def subset(self, names: Sequence[str]) -> "VariableLayout":
        sizes = dict(self.groups)
        return VariableLayout(tuple((name, sizes[name]) for name in names))

    def rename(self, old: str, new: str) -> "VariableLayout":
        return VariableLayout(tuple((new if name == old else name, size) for name, size in self.groups))


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """State snapshots as columns of an n × k matrix, sampled every `dt` from `t0`."""

    data: np.ndarray
    dt: float
    layout: VariableLayout
    t0: float = 0.0

    def __post_init__(self):
        data = np.array(self.data, dtype=float, order="F")
        if data.ndim != 2:
            raise InvalidDimensionError(f"snapshot data must be 2-D, got shape {data.shape}")
        if data.shape[1] < 1:
            raise InvalidDimensionError("snapshot set needs at least one column")
        if data.shape[0] != self.layout.n:
            raise ShapeError(f"layout describes {self.layout.n} rows, data has {data.shape[0]}")
        if not self.dt > 0:
            raise DomainError(f"time step must be positive, got {self.dt}")
        if not np.all(np.isfinite(data)):
            raise DomainError("snapshot data contains non-finite entries")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t0", float(self.t0))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def k(self) -> int:
        return self.data.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.k)

    def group(self, name: str) -> np.ndarray:
        return self.data[self.layout.slice(name)]

    def select_groups(self, names: Sequence[str]) -> "SnapshotSet":
        data = np.vstack([self.group(name) for name in names])
        return SnapshotSet(data, self.dt, self.layout.subset(names), self.t0)

    def columns(self, start: int = 0, stop: Optional[int] = None) -> "SnapshotSet":
        stop = self.k if stop is None else stop
        return SnapshotSet(self.data[:, start:stop], self.dt, self.layout, self.t0 + start * self.dt)

    def with_data(self, data: np.ndarray, layout: Optional[VariableLayout] = None) -> "SnapshotSet":
        return SnapshotSet(data, self.dt, layout or self.layout, self.t0)


def stack(sets: Sequence[SnapshotSet]) -> SnapshotSet:
    """Stack snapshot sets row-wise (e.g. structural over fluid)."""
    first = sets[0]
    for other in sets[1:]:
        if other.k != first.k or other.dt != first.dt:
            raise ShapeError("stacked snapshot sets must share column count and time step")
    layout = VariableLayout(tuple(g for s in sets for g in s.layout.groups))
    return SnapshotSet(np.vstack([s.data for s in sets]), first.dt, layout, first.t0)


def concatenate_trajectories(sets: Sequence[SnapshotSet]) -> SnapshotSet:
    """Join trajectories column-wise; time metadata is taken from the first."""
    first = sets[0]
    for other in sets[1:]:
        if other.layout != first.layout:
            raise ShapeError("trajectories must share a layout")
    return SnapshotSet(np.hstack([s.data for s in sets]), first.dt, first.layout, first.t0)


# Lifting =====================================================================

def lift_specific_volume(S: SnapshotSet, group: str = DENSITY) -> SnapshotSet:
    """Replace the density group by its reciprocal, the specific volume."""
    if group not in S.layout.names:
        raise ShapeError(f"no '{group}' group to lift; layout has {S.layout.names}")
    rows = S.layout.slice(group)
    block = S.data[rows]
    bad = np.argwhere(block <= 0)
    if bad.size:
        row, col = bad[0]
        raise DomainError(
            f"density must be strictly positive; found {block[row, col]} "
            f"at row {rows.start + row}, column {col}"
        )
    data = np.array(S.data)
    data[rows] = 1.0 / block
    return S.with_data(data, S.layout.rename(group, SPECIFIC_VOLUME))


def unlift_specific_volume(S: SnapshotSet) -> SnapshotSet:
    lifted = lift_specific_volume(S, SPECIFIC_VOLUME)
    return lifted.with_data(lifted.data, lifted.layout.rename(SPECIFIC_VOLUME, DENSITY))


# Shift / scale ===============================================================

SYMMETRIC = (-1.0, 1.0)
UNIT = (0.0, 1.0)


def default_target(name: str) -> Tuple[float, float]:
    return UNIT if name == SPECIFIC_VOLUME else SYMMETRIC


@dataclass(frozen=True, eq=False)
class GroupTransform:
    """x̃ = gain · (x − shift) + offset, with `shift` a scalar or a per-row vector."""

    shift: np.ndarray
    gain: float = 1.0
    offset: float = 0.0
    target: Optional[Tuple[float, float]] = None

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.gain * (x - self.shift) + self.offset

    def invert(self, y: np.ndarray) -> np.ndarray:
        return (y - self.offset) / self.gain + self.shift


@dataclass(frozen=True, eq=False)
class Preprocessor:
    layout: VariableLayout
    transforms: Dict[str, GroupTransform] = field(default_factory=dict)

    def _check(self, S: SnapshotSet):
        if S.layout != self.layout:
            raise ShapeError(f"layout {S.layout.groups} does not match fitted layout {self.layout.groups}")

    def _map(self, S: SnapshotSet, forward: bool) -> SnapshotSet:
        self._check(S)
        data = np.array(S.data)
        for name, tf in self.transforms.items():
            rows = self.layout.slice(name)
            block = data[rows]
            shift_shape = tf.shift.reshape(-1, 1) if np.ndim(tf.shift) else tf.shift
            tf_local = replace(tf, shift=shift_shape)
            data[rows] = tf_local.apply(block) if forward else tf_local.invert(block)
        return S.with_data(data)

    def apply(self, S: SnapshotSet) -> SnapshotSet:
        return self._map(S, forward=True)

    def invert(self, S: SnapshotSet) -> SnapshotSet:
        return self._map(S, forward=False)

    def row_affine(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-row (scale, bias) with x = scale · x̃ + bias (the inverse map)."""
        scale = np.ones(self.layout.n)
        bias = np.zeros(self.layout.n)
        for name, tf in self.transforms.items():
            rows = self.layout.slice(name)
            scale[rows] = 1.0 / tf.gain
            bias[rows] = tf.shift - tf.offset / tf.gain
        return scale, bias

    def to_json(self) -> bytes:
        payload = {
            "layout": [list(g) for g in self.layout.groups],
            "transforms": {
                name: {
                    "shift": np.atleast_1d(tf.shift).tolist() if np.ndim(tf.shift) else float(tf.shift),
                    "gain": tf.gain,
                    "offset": tf.offset,
                    "target": list(tf.target) if tf.target else None,
                }
                for name, tf in self.transforms.items()
            },
        }
        return orjson.dumps(payload, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2)

    @classmethod
    def from_json(cls, raw: bytes) -> "Preprocessor":
        payload = orjson.loads(raw)
        layout = VariableLayout(tuple((name, size) for name, size in payload["layout"]))
        transforms = {}
        for name, tf in payload["transforms"].items():
            shift = np.asarray(tf["shift"], dtype=float)
            transforms[name] = GroupTransform(
                shift=shift if shift.ndim else float(shift),
                gain=tf["gain"],
                offset=tf["offset"],
                target=tuple(tf["target"]) if tf["target"] else None,
            )
        return cls(layout, transforms)


def fit_shift_scale(
    S: SnapshotSet,
    targets: Optional[Dict[str, Optional[Tuple[float, float]]]] = None,
    groups: Optional[Iterable[str]] = None,
    shift_mode: str = "group",
    scale: bool = True,
    allow_constant: bool = False,
) -> Preprocessor:
    """Fit per-group shifts (temporal means) and affine range scaling.

    Only `groups` are transformed (all groups when omitted). `targets` maps a
    group to its target interval; specific volume defaults to [0, 1], all
    other groups to [-1, 1]. `shift_mode="row"` subtracts the temporal mean of
    every row instead of one scalar per group.
    """
    if shift_mode not in ("group", "row"):
        raise ValueError(f"unknown shift mode '{shift_mode}'")
    targets = targets or {}
    names = list(groups) if groups is not None else S.layout.names
    transforms = {}
    for name in names:
        block = S.group(name)
        shift = block.mean(axis=1) if shift_mode == "row" else float(block.mean())
        shifted = block - (shift[:, None] if shift_mode == "row" else shift)
        lo, hi = float(shifted.min()), float(shifted.max())
        target = targets.get(name, default_target(name))
        if not scale:
            transforms[name] = GroupTransform(shift=shift)
            continue
        if hi - lo <= 0:
            if not allow_constant:
                raise DegenerateError(f"group '{name}' has zero spread after shifting")
            logger.warning(f"group '{name}' is constant; using unit gain")
            transforms[name] = GroupTransform(shift=shift, gain=1.0, offset=0.0, target=target)
            continue
        gain = (target[1] - target[0]) / (hi - lo)
        offset = target[0] - gain * lo
        transforms[name] = GroupTransform(shift=shift, gain=gain, offset=offset, target=target)
        logger.debug(f"group '{name}': shift={np.mean(shift):.6g} gain={gain:.6g} offset={offset:.6g}")
    return Preprocessor(S.layout, transforms)


def apply(P: Preprocessor, S: SnapshotSet) -> SnapshotSet:
    return P.apply(S)


def invert(P: Preprocessor, S: SnapshotSet) -> SnapshotSet:
    return P.invert(S)


# Binary container ============================================================

_HEADER = struct.Struct("<4sI")
_DIMS = struct.Struct("<QQdd")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_MATRIX = struct.Struct("<QQ")


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        if self.pos + size > len(self.raw):
            raise TruncationError(f"truncated file while reading {what}", self.pos)
        chunk = self.raw[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: struct.Struct, what: str):
        return fmt.unpack(self.take(fmt.size, what))

    def string(self, what: str) -> str:
        (length,) = self.unpack(_U32, f"{what} length")
        start = self.pos
        try:
            return self.take(length, what).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{what} is not valid UTF-8", start)

    def floats(self, count: int, what: str) -> np.ndarray:
        if count * 8 > len(self.raw) - self.pos:
            raise TruncationError(
                f"{what} declares {count} values but only {len(self.raw) - self.pos} bytes remain",
                self.pos,
            )
        return np.frombuffer(self.take(count * 8, what), dtype="<f8")

    def finish(self, what: str):
        if self.pos != len(self.raw):
            raise FormatError(f"{len(self.raw) - self.pos} trailing bytes after {what}", self.pos)

    def header(self):
        magic, version = self.unpack(_HEADER, "header")
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
        if version != VERSION:
            raise FormatError(f"unsupported version {version}", 4)


def _pack_string(value: str) -> bytes:
    encoded = value.encode("utf-8")
    return _U32.pack(len(encoded)) + encoded


def write_snapshots(S: SnapshotSet, path: PathLike) -> Path:
    path = Path(path)
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION))
    buf.write(_DIMS.pack(S.n, S.k, S.dt, S.t0))
    buf.write(_U32.pack(len(S.layout.groups)))
    for name, size in S.layout.groups:
        buf.write(_pack_string(name))
        buf.write(_U64.pack(size))
    buf.write(np.asarray(S.data, dtype="<f8").tobytes(order="F"))
    path.write_bytes(buf.getvalue())
    logger.debug(f"wrote {S.n}x{S.k} snapshots to {path}")
    return path


def read_snapshots(path: PathLike) -> SnapshotSet:
    reader = _Reader(Path(path).read_bytes())
    reader.header()
    n, k, dt, t0 = reader.unpack(_DIMS, "dimensions")
    (count,) = reader.unpack(_U32, "group count")
    groups = []
    for _ in range(count):
        name = reader.string("group name")
        start = reader.pos
        (size,) = reader.unpack(_U64, "group size")
        if size == 0:
            raise FormatError(f"group '{name}' has size 0", start)
        groups.append((name, size))
    try:
        layout = VariableLayout(tuple(groups))
    except ShapeError as e:
        raise FormatError(e.message, _HEADER.size + _DIMS.size)
    values = reader.floats(n * k, "snapshot data")
    reader.finish("snapshot data")
    if layout.n != n:
        raise FormatError(f"layout covers {layout.n} rows, header declares {n}", _HEADER.size)
    return SnapshotSet(values.reshape((n, k), order="F"), dt, layout, t0)


def write_sections(sections: Dict[str, np.ndarray], path: PathLike) -> Path:
    """Write named matrices into the container (header, count, then sections)."""
    path = Path(path)
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION))
    buf.write(_U32.pack(len(sections)))
    for name, matrix in sections.items():
        matrix = np.atleast_2d(np.asarray(matrix, dtype="<f8"))
        buf.write(_pack_string(name))
        buf.write(_MATRIX.pack(*matrix.shape))
        buf.write(matrix.tobytes(order="F"))
    path.write_bytes(buf.getvalue())
    return path


def read_sections(path: PathLike) -> Dict[str, np.ndarray]:
    reader = _Reader(Path(path).read_bytes())
    reader.header()
    (count,) = reader.unpack(_U32, "section count")
    sections = {}
    for _ in range(count):
        name = reader.string("section name")
        rows, cols = reader.unpack(_MATRIX, f"section '{name}' shape")
        sections[name] = reader.floats(rows * cols, f"section '{name}'").reshape((rows, cols), order="F")
    reader.finish("the last section")
    return sections


# CSV =========================================================================

def format_float(value: float) -> str:
    return f"{float(value):.17g}"


def snapshots_to_csv(S: SnapshotSet, path: PathLike) -> Path:
    path = Path(path)
    header = ["time"] + [f"{name}[{i}]" for name, size in S.layout.groups for i in range(size)]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t, column in zip(S.times, S.data.T):
            writer.writerow([format_float(t)] + [format_float(v) for v in column])
    return path
