"""Reduced model evaluation: integration, quantities of interest, errors and stability."""

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import DegenerateError, DomainError, NumericError, ShapeError
from .fomsim import FLUID, GDISP, GVEL, CoupledFom, rk4
from .opinf import OperatorSet
from .pod import CoupledBasis
from .snapshots import Preprocessor, format_float

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RomTrajectory:
    states: np.ndarray
    dt: float
    t0: float
    r_s: int
    r_f: int
    blowup_step: Optional[int] = None

    @property
    def k(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.k)

    @property
    def blew_up(self) -> bool:
        return self.blowup_step is not None

    @property
    def structural(self) -> np.ndarray:
        return self.states[:self.r_s]

    @property
    def fluid(self) -> np.ndarray:
        return self.states[self.r_s:]


@dataclass(frozen=True, eq=False)
class QoiSeries:
    values: np.ndarray
    name: str
    dt: float
    t0: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.size)


@dataclass(frozen=True, eq=False)
class QoiFunctional:
    """Affine functional of the reduced state: value = weights · q̂ + bias."""

    name: str
    weights: np.ndarray
    bias: float = 0.0

    def __call__(self, Q_hat: np.ndarray) -> np.ndarray:
        return self.weights @ Q_hat + self.bias


def rom_rhs(ops: OperatorSet, q_hat) -> np.ndarray:
    q_hat = np.asarray(q_hat, dtype=float)
    if q_hat.shape[0] != ops.r:
        raise ShapeError(f"reduced state needs {ops.r} entries, got {q_hat.shape[0]}")
    if not np.all(np.isfinite(q_hat)):
        raise NumericError("reduced state has non-finite entries")
    return ops.rhs(q_hat)


def integrate_rom(ops: OperatorSet, q0, dt: float, k: int, t0: float = 0.0,
                  threshold: Optional[float] = None) -> RomTrajectory:
    """RK4 over k snapshots; a blow-up truncates the trajectory and is flagged, not raised."""
    q0 = np.asarray(q0, dtype=float)
    if q0.shape != (ops.r,):
        raise ShapeError(f"initial reduced state needs {ops.r} entries, got shape {q0.shape}")
    result = rk4(ops.rhs, q0, dt, k, threshold=threshold)
    if result.blowup_step is not None:
        logger.debug(f"ROM blew up at step {result.blowup_step}")
    return RomTrajectory(result.states, dt, t0, ops.r_s, ops.r_f, result.blowup_step)


def qoi_functional(name: str, fom: CoupledFom, basis: CoupledBasis,
                   preprocessor: Optional[Preprocessor] = None) -> QoiFunctional:
    """Pull a physical QoI back to the reduced state through the basis and preprocessing.

    The physical state is x = scale ⊙ (V q̂) + bias row by row, so a linear
    functional cᵀx becomes (c ⊙ scale)ᵀ V q̂ + cᵀ bias.
    """
    if preprocessor is not None:
        scale, bias = preprocessor.row_affine()
    else:
        scale, bias = np.ones(fom.n), np.zeros(fom.n)
    c = np.zeros(fom.n)
    if name == "lift":
        c[fom.n_s:] = fom.qoi
    else:
        kind, _, index = name.partition("_")
        if kind not in (GDISP, GVEL) or not index.isdigit() or not 1 <= int(index) <= fom.m:
            raise KeyError(f"unknown QoI '{name}'")
        c[int(index) - 1 + (fom.m if kind == GVEL else 0)] = 1.0
    weighted = c * scale
    weights = np.concatenate([
        weighted[:fom.n_s] @ basis.structural.vectors,
        weighted[fom.n_s:] @ basis.fluid.vectors,
    ])
    return QoiFunctional(name, weights, float(c @ bias))


def extract_qoi(traj: RomTrajectory, functional: QoiFunctional) -> QoiSeries:
    if functional.weights.size != traj.states.shape[0]:
        raise ShapeError(f"functional '{functional.name}' expects {functional.weights.size} reduced coordinates")
    return QoiSeries(functional(traj.states), functional.name, traj.dt, traj.t0)


def relative_rmse(fom_series, rom_series, window: Optional[Tuple[int, Optional[int]]] = None) -> float:
    """RMS difference over the window normalized by the range of the FOM series there."""
    a = np.asarray(getattr(fom_series, "values", fom_series), dtype=float)
    b = np.asarray(getattr(rom_series, "values", rom_series), dtype=float)
    if window is not None:
        a = a[slice(*window)]
        b = b[slice(*window)]
    if a.shape != b.shape or a.size == 0:
        raise ShapeError(f"series lengths differ in window ({a.size} != {b.size})")
    spread = a.max() - a.min()
    if spread == 0:
        raise DegenerateError("reference series is constant over the window")
    return float(np.sqrt(np.mean((a - b) ** 2)) / spread)


class GrowthCheck(NamedTuple):
    passed: bool
    coordinate: Optional[int]
    ratio: float


def bounded_growth_check(train, test: Union[RomTrajectory, np.ndarray], alpha: float) -> GrowthCheck:
    """Reject trajectories straying from the training mean by more than α times the training deviation.

    A coordinate whose training deviation is zero uses the largest training
    deviation over all coordinates instead. `ratio` is the worst test
    deviation relative to its allowance.
    """
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    train = np.asarray(getattr(train, "states", train), dtype=float)
    if isinstance(test, RomTrajectory):
        if test.blew_up:
            return GrowthCheck(False, None, np.inf)
        test = test.states
    test = np.asarray(test, dtype=float)
    if train.shape[0] != test.shape[0]:
        raise ShapeError(f"trajectories have {train.shape[0]} and {test.shape[0]} coordinates")
    if not np.all(np.isfinite(test)):
        return GrowthCheck(False, None, np.inf)
    mean = train.mean(axis=1, keepdims=True)
    d = np.abs(train - mean).max(axis=1)
    fallback = d.max()
    if fallback == 0:
        raise DegenerateError("training trajectory is constant in every coordinate")
    d = np.where(d > 0, d, fallback)
    ratios = np.abs(test - mean).max(axis=1) / (alpha * d)
    worst = int(np.argmax(ratios))
    if ratios[worst] > 1:
        return GrowthCheck(False, worst, float(ratios[worst]))
    return GrowthCheck(True, None, float(ratios[worst]))


class TimingStats(NamedTuple):
    median: float
    p25: float
    p75: float


def time_rhs(ops: OperatorSet, repetitions: int = 50, evaluations: int = 200, seed: int = 0) -> TimingStats:
    """Seconds per right-hand-side evaluation on the calling thread, BLAS pinned to one thread."""
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(ops.r)
    rhs = ops.rhs
    samples = np.empty(repetitions)
    with threadpool_limits(limits=1):
        for _ in range(evaluations):
            rhs(q)
        for rep in range(repetitions):
            start = time.perf_counter()
            for _ in range(evaluations):
                rhs(q)
            samples[rep] = (time.perf_counter() - start) / evaluations
    p25, median, p75 = np.percentile(samples, [25, 50, 75])
    return TimingStats(float(median), float(p25), float(p75))


# Exports =====================================================================

def qoi_series_to_csv(series: Sequence[QoiSeries], path) -> Path:
    path = Path(path)
    if not series:
        raise ValueError("no QoI series to export")
    length = min(s.values.size for s in series)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time"] + [s.name for s in series])
        times = series[0].times
        for t in range(length):
            writer.writerow([format_float(times[t])] + [format_float(s.values[t]) for s in series])
    return path


def error_table_to_csv(rows: Iterable[Dict], path) -> Path:
    """Rows of (case, r_f, method, qoi, eps_rel)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["case", "r_f", "method", "qoi", "eps_rel"])
        for row in rows:
            writer.writerow([row["case"], row["r_f"], row["method"], row["qoi"], format_float(row["eps_rel"])])
    return path


def reconstruct_slices(traj: RomTrajectory, basis: CoupledBasis, preprocessor: Optional[Preprocessor],
                       k_train: int, path, multiples: Sequence[int] = (1, 2, 3)) -> Path:
    """Reconstructed physical fluid state at multiples of the training length, one column each."""
    path = Path(path)
    steps = [m * k_train for m in multiples if m * k_train < traj.k]
    fluid = basis.fluid.reconstruct(traj.fluid[:, steps])
    if preprocessor is not None and FLUID in preprocessor.transforms:
        tf = preprocessor.transforms[FLUID]
        shift = tf.shift.reshape(-1, 1) if np.ndim(tf.shift) else tf.shift
        fluid = (fluid - tf.offset) / tf.gain + shift
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["point"] + [f"t={format_float(traj.t0 + s * traj.dt)}" for s in steps])
        for i, row in enumerate(fluid):
            writer.writerow([i] + [format_float(v) for v in row])
    return path
