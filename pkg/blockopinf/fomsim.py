"""Synthetic coupled full-order model.

A linear modal structure (first-order form of undamped/damped modal
equations) coupled linearly to a 1-D viscous Burgers discretization, written
in the block form

    q̇_s = c_s + A_s q_s + E_s q_f + H_s (q_s⊗q_s) + L_s (q_s⊗q_f) + G_s (q_f⊗q_f)
    q̇_f = c_f + A_f q_f + E_f q_s + H_f (q_f⊗q_f) + L_f (q_s⊗q_f) + G_f (q_s⊗q_s)

with all quadratic terms in compact form. The same block layout is used by
the reduced operators in `opinf`.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .config import settings
from .errors import BlowUpError, ConfigError, InsufficientDataError, ShapeError
from .models import FomConfig
from .pod import CoupledBasis
from .snapshots import SnapshotSet, VariableLayout
from .tensorkit import columnwise_features, compact_size, quad_index_map

logger = logging.getLogger(__name__)

GDISP = "gdisp"
GVEL = "gvel"
FLUID = "u"
STRUCTURAL_GROUPS = (GDISP, GVEL)
FLUID_GROUPS = (FLUID,)

BLOCK_NAMES = ("c_s", "c_f", "A_s", "A_f", "E_s", "E_f", "H_s", "H_f", "L_s", "L_f", "G_s", "G_f")


def block_shape(name: str, r_s: int, r_f: int) -> Tuple[int, int]:
    """Shape of a canonical block for state dims (r_s, r_f)."""
    rows = r_s if name.endswith("_s") else r_f
    own, other = (r_s, r_f) if name.endswith("_s") else (r_f, r_s)
    cols = {
        "c": 1,
        "A": own,
        "E": other,
        "H": compact_size(own),
        "L": r_s * r_f,
        "G": compact_size(other),
    }[name[0]]
    return rows, cols


@dataclass(frozen=True, eq=False)
class ModalStructure:
    frequencies: np.ndarray  # rad/s
    damping: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.frequencies, dtype=float).ravel()
        z = np.asarray(self.damping, dtype=float).ravel()
        if w.size == 0 or np.any(w <= 0):
            raise ConfigError("modal frequencies must be positive")
        if z.shape != w.shape or np.any(z < 0):
            raise ConfigError("damping ratios must be nonnegative, one per mode")
        object.__setattr__(self, "frequencies", w)
        object.__setattr__(self, "damping", z)

    @property
    def m(self) -> int:
        return self.frequencies.size

    def state_matrix(self) -> np.ndarray:
        """[[0, I], [−Ω, −Z]] over the state [η; η̇]."""
        m = self.m
        A = np.zeros((2 * m, 2 * m))
        A[:m, m:] = np.eye(m)
        A[m:, :m] = -np.diag(self.frequencies**2)
        A[m:, m:] = -np.diag(2 * self.frequencies * self.damping)
        return A


@dataclass(frozen=True, eq=False)
class CoupledFom:
    n_s: int
    n_f: int
    blocks: Dict[str, np.ndarray]
    qoi: np.ndarray
    structure: Optional[ModalStructure] = None

    def __post_init__(self):
        given = dict(self.blocks)
        unknown = set(given) - set(BLOCK_NAMES)
        if unknown:
            raise ShapeError(f"unknown blocks: {sorted(unknown)}")
        blocks = {}
        for name in BLOCK_NAMES:
            expected = block_shape(name, self.n_s, self.n_f)
            block = np.array(given.get(name, np.zeros(expected)), dtype=float)
            if name.startswith("c_"):
                block = block.reshape(-1, 1)
            if block.shape != expected:
                raise ShapeError(f"block {name} has shape {block.shape}, expected {expected}")
            if not np.all(np.isfinite(block)):
                raise ShapeError(f"block {name} has non-finite entries")
            block.setflags(write=False)
            blocks[name] = block
        object.__setattr__(self, "blocks", blocks)
        if np.shape(self.qoi) != (self.n_f,):
            raise ShapeError(f"QoI weights need {self.n_f} entries")
        active = tuple(name for name in BLOCK_NAMES if np.any(self.blocks[name]))
        object.__setattr__(self, "active", active)

    def __getattr__(self, name):
        if name in BLOCK_NAMES:
            return self.blocks[name]
        raise AttributeError(name)

    @property
    def n(self) -> int:
        return self.n_s + self.n_f

    @property
    def m(self) -> int:
        return self.n_s // 2

    @property
    def layout(self) -> VariableLayout:
        return VariableLayout(((GDISP, self.m), (GVEL, self.n_s - self.m), (FLUID, self.n_f)))

    def rhs(self, q: np.ndarray) -> np.ndarray:
        """Right-hand side for one state (1-D) or for every column of a matrix."""
        q = np.asarray(q, dtype=float)
        Q = q.reshape(self.n, -1)
        qs, qf = Q[:self.n_s], Q[self.n_s:]
        features = {"s": qs, "f": qf}
        cache = {}

        def feature(kind):
            if kind not in cache:
                if kind == "ss":
                    cache[kind] = columnwise_features(qs)
                elif kind == "ff":
                    cache[kind] = columnwise_features(qf)
                else:
                    cache[kind] = columnwise_features(qs, qf)
            return cache[kind]

        out_s = np.zeros_like(qs)
        out_f = np.zeros_like(qf)
        for name in self.active:
            block = self.blocks[name]
            target = out_s if name.endswith("_s") else out_f
            own, other = ("s", "f") if name.endswith("_s") else ("f", "s")
            head = name[0]
            if head == "c":
                target += block
            elif head == "A":
                target += block @ features[own]
            elif head == "E":
                target += block @ features[other]
            elif head == "H":
                target += block @ feature(own * 2)
            elif head == "L":
                target += block @ feature("sf")
            else:
                target += block @ feature(other * 2)
        out = np.concatenate([out_s, out_f], axis=0)
        return out.ravel() if q.ndim == 1 else out


def burgers_operators(n_f: int, nu: float) -> Tuple[np.ndarray, np.ndarray]:
    """Second-order finite differences of u_t = ν u_xx − u u_x on (0, 1), u = 0 at both ends.

    Returns the linear diffusion matrix and the compact quadratic advection operator.
    """
    h = 1.0 / (n_f + 1)
    A = (nu / h**2) * (np.diag(-2.0 * np.ones(n_f)) + np.diag(np.ones(n_f - 1), 1) + np.diag(np.ones(n_f - 1), -1))
    idx = quad_index_map(n_f)
    H = np.zeros((n_f, len(idx)))
    for i in range(n_f - 1):
        # −u_i (u_{i+1} − u_{i−1}) / 2h contributes u_i u_{i+1} to rows i and i+1
        col = idx.index(i, i + 1)
        H[i, col] = -1.0 / (2 * h)
        H[i + 1, col] = 1.0 / (2 * h)
    return A, H


def burgers_rhs(u: np.ndarray, nu: float) -> np.ndarray:
    """Direct stencil evaluation of the same discretization."""
    n_f = u.size
    h = 1.0 / (n_f + 1)
    padded = np.concatenate([[0.0], u, [0.0]])
    diffusion = nu * (padded[2:] - 2 * padded[1:-1] + padded[:-2]) / h**2
    advection = -padded[1:-1] * (padded[2:] - padded[:-2]) / (2 * h)
    return diffusion + advection


def modal_structure(cfg: FomConfig) -> ModalStructure:
    freqs = 2 * np.pi * np.asarray(cfg.frequencies_hz[:cfg.m], dtype=float)
    damping = np.zeros(cfg.m) if cfg.damping_ratios is None else np.asarray(cfg.damping_ratios[:cfg.m])
    return ModalStructure(freqs, damping)


def build_synthetic_fom(cfg: FomConfig) -> CoupledFom:
    if cfg.nu <= 0:
        raise ConfigError(f"viscosity must be positive, got {cfg.nu}")
    if cfg.m > cfg.n_f:
        raise ConfigError(f"mode count m={cfg.m} exceeds fluid points n_f={cfg.n_f}")
    structure = modal_structure(cfg)
    m, n_f = cfg.m, cfg.n_f
    n_s = 2 * m
    A_f, H_f = burgers_operators(n_f, cfg.nu)
    w = np.full(n_f, 1.0 / n_f)

    E_f = np.zeros((n_f, n_s))
    E_f[np.arange(m), np.arange(m)] = cfg.kappa_f
    E_s = np.zeros((n_s, n_f))
    E_s[m:, :] = cfg.kappa_s * w

    blocks = {"A_s": structure.state_matrix(), "A_f": A_f, "H_f": H_f, "E_s": E_s, "E_f": E_f}
    fom = CoupledFom(n_s, n_f, blocks, w, structure)
    logger.info(
        f"built synthetic FOM: m={m}, n_f={n_f}, nu={cfg.nu}, "
        f"kappa_f={cfg.kappa_f}, kappa_s={cfg.kappa_s}, active blocks {list(fom.active)}"
    )
    return fom


def initial_state(fom: CoupledFom, gvel: Union[float, Sequence[float]] = 0.0, gdisp: Union[float, Sequence[float]] = 0.0) -> np.ndarray:
    q0 = np.zeros(fom.n)
    q0[:fom.m] = gdisp
    q0[fom.m:fom.n_s] = gvel
    return q0


def single_mode_cases(fom: CoupledFom, gvel: float = 0.1) -> Dict[str, np.ndarray]:
    """One initial state per mode with only that mode's generalized velocity perturbed."""
    cases = {}
    for i in range(fom.m):
        velocities = np.zeros(fom.m)
        velocities[i] = gvel
        cases[f"gvel{i + 1}"] = initial_state(fom, gvel=velocities)
    return cases


def random_initial_states(fom: CoupledFom, count: int, seed: int = 0, amplitude: float = 1.0) -> np.ndarray:
    """Smooth random fluid profiles (a few sine modes) with random modal states, one per column."""
    rng = np.random.default_rng(seed)
    x = np.arange(1, fom.n_f + 1) / (fom.n_f + 1)
    states = np.zeros((fom.n, count))
    for j in range(count):
        coeffs = rng.normal(0.0, amplitude, size=4) / np.arange(1, 5)
        states[fom.n_s:, j] = sum(c * np.sin((i + 1) * np.pi * x) for i, c in enumerate(coeffs))
        states[:fom.n_s, j] = rng.normal(0.0, 0.1 * amplitude, size=fom.n_s)
    return states


def fom_qoi(fom: CoupledFom, S: SnapshotSet, name: str) -> np.ndarray:
    """QoI series from full states: `lift` (fluid functional), `gdisp_i`, `gvel_i` (1-based)."""
    if name == "lift":
        return fom.qoi @ S.data[fom.n_s:]
    kind, _, index = name.partition("_")
    if kind not in (GDISP, GVEL) or not index.isdigit() or not 1 <= int(index) <= fom.m:
        raise KeyError(f"unknown QoI '{name}'")
    row = int(index) - 1 + (fom.m if kind == GVEL else 0)
    return S.data[row]


# Time integration ============================================================

class Integration(NamedTuple):
    states: np.ndarray
    blowup_step: Optional[int]


def rk4(rhs: Callable[[np.ndarray], np.ndarray], q0: np.ndarray, dt: float, k: int,
        threshold: Optional[float] = None) -> Integration:
    """Classical fixed-step RK4; column t is the state after t steps, column 0 is q0.

    Integration stops at the first non-finite state or entry above `threshold`;
    the returned states are then truncated before that step.
    """
    if not dt > 0:
        raise ConfigError(f"time step must be positive, got {dt}")
    if k < 1:
        raise InsufficientDataError(f"need at least one snapshot, got k={k}")
    threshold = settings.BLOWUP_THRESHOLD if threshold is None else threshold
    q = np.array(q0, dtype=float)
    states = np.empty((q.size, k))
    states[:, 0] = q
    half = dt / 2
    for t in range(1, k):
        k1 = rhs(q)
        k2 = rhs(q + half * k1)
        k3 = rhs(q + half * k2)
        k4 = rhs(q + dt * k3)
        q = q + (dt / 6) * (k1 + 2 * (k2 + k3) + k4)
        if not np.all(np.isfinite(q)) or np.max(np.abs(q)) > threshold:
            return Integration(states[:, :t], t)
        states[:, t] = q
    return Integration(states, None)


def integrate_fom(fom: CoupledFom, q0: np.ndarray, dt: float, k: int, t0: float = 0.0) -> SnapshotSet:
    q0 = np.asarray(q0, dtype=float)
    if q0.shape != (fom.n,):
        raise ShapeError(f"initial state needs {fom.n} entries, got shape {q0.shape}")
    result = rk4(fom.rhs, q0, dt, k, threshold=np.inf)
    if result.blowup_step is not None:
        raise BlowUpError("full-order state became non-finite", result.blowup_step)
    return SnapshotSet(result.states, dt, fom.layout, t0)


# Time derivatives ============================================================

FD6_STENCIL = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0


class Derivatives(NamedTuple):
    """Derivative columns matching snapshot columns start..stop-1."""

    values: np.ndarray
    start: int
    stop: int


def fd_time_derivative(S: Union[SnapshotSet, np.ndarray], dt: Optional[float] = None) -> Derivatives:
    """Sixth-order centered differences; the first and last three columns are dropped."""
    if isinstance(S, SnapshotSet):
        Q, dt = S.data, S.dt
    else:
        Q = np.atleast_2d(np.asarray(S, dtype=float))
    if dt is None or not dt > 0:
        raise ConfigError("a positive time step is required")
    k = Q.shape[1]
    if k < 7:
        raise InsufficientDataError(f"sixth-order differences need at least 7 snapshots, got {k}")
    values = np.zeros((Q.shape[0], k - 6))
    for offset, weight in enumerate(FD6_STENCIL):
        if weight:
            values += weight * Q[:, offset:offset + k - 6]
    return Derivatives(values / dt, 3, k - 3)


def exact_derivatives(fom: CoupledFom, S: SnapshotSet) -> Derivatives:
    return Derivatives(fom.rhs(S.data), 0, S.k)


def projected_exact_derivatives(fom: CoupledFom, basis: CoupledBasis, Q_reduced: np.ndarray) -> np.ndarray:
    """Vᵀ f(V q̂) for every column of the reduced data."""
    return basis.project(fom.rhs(basis.reconstruct(Q_reduced)))
