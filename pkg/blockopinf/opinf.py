"""Operator Inference: monolithic and block-structured regularized least squares.

The block problem splits the reduced state into structural and fluid parts,
q̂ = [q̂_s; q̂_f], and learns each row of the block ODE separately:

    D̂_s Ô_sᵀ ≈ R̂_sᵀ,   D̂_f Ô_fᵀ ≈ R̂_fᵀ,

where the data matrices hold only the feature groups whose blocks are
learned. Blocks fixed to zero are dropped; known blocks are moved to the
right-hand side.
"""

import enum
import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg as la

from .errors import RankDeficiencyWarning, ShapeError
from .fomsim import BLOCK_NAMES, CoupledFom, block_shape
from .models import MonolithicRegWeights, RegWeights
from .pod import CoupledBasis
from .snapshots import read_sections, write_sections
from .tensorkit import (
    block_pair_columns,
    columnwise_features,
    compact_size,
    compress_full,
    expand_compact,
    quad_index_map,
)

logger = logging.getLogger(__name__)

BLOCK = "block"
MONOLITHIC = "monolithic"
MONOLITHIC_NAMES = ("c", "A", "H")


class Role(enum.Enum):
    LEARN = "learn"
    ZERO = "zero"
    KNOWN = "known"


def _feature_kind(name: str) -> str:
    """Feature group a block multiplies: "1", "s", "f", "ss", "sf" or "ff"."""
    own, other = ("s", "f") if name.endswith("_s") else ("f", "s")
    return {"c": "1", "A": own, "E": other, "H": own * 2, "L": "sf", "G": other * 2}[name[0]]


@dataclass(frozen=True, eq=False)
class StructureMask:
    roles: Dict[str, Role]
    known: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        roles = {name: Role(self.roles.get(name, Role.LEARN)) for name in BLOCK_NAMES}
        unknown = set(self.roles) - set(BLOCK_NAMES)
        if unknown:
            raise ShapeError(f"unknown blocks in mask: {sorted(unknown)}")
        for name, role in roles.items():
            if role is Role.KNOWN and name not in self.known:
                raise ShapeError(f"block {name} is KNOWN but no value was given")
        object.__setattr__(self, "roles", roles)

    @classmethod
    def full(cls) -> "StructureMask":
        return cls({name: Role.LEARN for name in BLOCK_NAMES})

    @classmethod
    def agard(cls) -> "StructureMask":
        """Linear structure, quadratic fluid, linear coupling."""
        zero = ("H_s", "L_s", "G_s", "L_f", "G_f")
        return cls({name: Role.ZERO if name in zero else Role.LEARN for name in BLOCK_NAMES})

    @classmethod
    def linear(cls) -> "StructureMask":
        return cls({name: Role.LEARN if name[0] in "cAE" else Role.ZERO for name in BLOCK_NAMES})

    @classmethod
    def preset(cls, name: str) -> "StructureMask":
        return {"agard": cls.agard, "full": cls.full, "linear": cls.linear}[name]()

    def learned(self, target: str) -> List[str]:
        return [n for n in _target_order(target) if self.roles[n] is Role.LEARN]

    def check(self, r_s: int, r_f: int):
        for name, value in self.known.items():
            expected = block_shape(name, r_s, r_f)
            if np.shape(np.atleast_2d(value).reshape(expected[0], -1)) != expected:
                raise ShapeError(f"known block {name} has shape {np.shape(value)}, expected {expected}")


def _target_order(target: str) -> Tuple[str, ...]:
    if target == "structural":
        return ("c_s", "A_s", "E_s", "H_s", "L_s", "G_s")
    if target == "fluid":
        return ("c_f", "E_f", "A_f", "G_f", "L_f", "H_f")
    raise ValueError(f"unknown target '{target}'")


@dataclass(frozen=True)
class MonolithicForm:
    constant: bool = True
    linear: bool = True
    quadratic: bool = True

    @classmethod
    def parse(cls, form: str) -> "MonolithicForm":
        """Model-form string, e.g. "cAH" or "AH"."""
        return cls("c" in form, "A" in form, "H" in form)


# Operator sets ===============================================================

class _Plan(NamedTuple):
    c: Optional[np.ndarray]
    K: Optional[np.ndarray]
    quad: Tuple[Tuple[Optional[slice], np.ndarray, str], ...]
    # Fused single-state kernel: rhs(q) = W @ [q; 1; q[I] * q[J]]
    W: np.ndarray
    I: np.ndarray
    J: np.ndarray


def _pair_indices(kind: str, r_s: int, r_f: int) -> Tuple[np.ndarray, np.ndarray]:
    """Stacked-state indices of the two factors of each quadratic feature."""
    if kind == "qq":
        m = quad_index_map(r_s + r_f)
        return m.rows, m.cols
    if kind == "ss":
        m = quad_index_map(r_s)
        return m.rows, m.cols
    if kind == "ff":
        m = quad_index_map(r_f)
        return m.rows + r_s, m.cols + r_s
    return np.repeat(np.arange(r_s), r_f), np.tile(np.arange(r_f), r_s) + r_s


def _fuse(r_s: int, r_f: int, c, K, quad) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    r = r_s + r_f
    pairs = [_pair_indices(kind, r_s, r_f) for _, _, kind in quad]
    p = sum(i.size for i, _ in pairs)
    W = np.zeros((r, r + 1 + p))
    if K is not None:
        W[:, :r] = K
    if c is not None:
        W[:, r] = c
    col = r + 1
    for (rows, M, _), (i, _) in zip(quad, pairs):
        W[rows if rows is not None else slice(None), col:col + i.size] = M
        col += i.size
    I = np.concatenate([i for i, _ in pairs]) if pairs else np.empty(0, dtype=np.intp)
    J = np.concatenate([j for _, j in pairs]) if pairs else np.empty(0, dtype=np.intp)
    W.setflags(write=False)
    return W, I, J


@dataclass(frozen=True, eq=False)
class OperatorSet:
    """Reduced operators; absent blocks are zero and never stored."""

    kind: str
    r_s: int
    r_f: int
    blocks: Dict[str, np.ndarray]

    def __post_init__(self):
        if self.kind not in (BLOCK, MONOLITHIC):
            raise ValueError(f"unknown operator set kind '{self.kind}'")
        blocks = {}
        for name, value in self.blocks.items():
            expected = self._shape(name)
            value = np.array(value, dtype=float).reshape(expected)
            value.setflags(write=False)
            blocks[name] = value
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "_plan", self._compile())

    @property
    def r(self) -> int:
        return self.r_s + self.r_f

    def _shape(self, name: str) -> Tuple[int, int]:
        if self.kind == BLOCK:
            if name not in BLOCK_NAMES:
                raise ShapeError(f"unknown block '{name}'")
            return block_shape(name, self.r_s, self.r_f)
        r = self.r
        shapes = {"c": (r, 1), "A": (r, r), "H": (r, compact_size(r))}
        if name not in shapes:
            raise ShapeError(f"unknown monolithic operator '{name}'")
        return shapes[name]

    def block(self, name: str) -> np.ndarray:
        """Stored block, or zeros of the right shape when absent."""
        if name in self.blocks:
            return self.blocks[name]
        return np.zeros(self._shape(name))

    def _compile(self) -> _Plan:
        r, r_s = self.r, self.r_s
        if self.kind == MONOLITHIC:
            c = self.blocks["c"].ravel() if "c" in self.blocks else None
            K = self.blocks.get("A")
            quad = ((None, self.blocks["H"], "qq"),) if "H" in self.blocks else ()
            return _Plan(c, K, quad, *_fuse(self.r_s, self.r_f, c, K, quad))

        c = np.zeros(r) if any(n in self.blocks for n in ("c_s", "c_f")) else None
        K = np.zeros((r, r)) if any(n[0] in "AE" for n in self.blocks) else None
        rows_of = {"s": slice(0, r_s), "f": slice(r_s, r)}
        quad_parts: Dict[str, Dict[str, np.ndarray]] = {}
        for name, value in self.blocks.items():
            rows = rows_of[name[-1]]
            kind = _feature_kind(name)
            if kind == "1":
                c[rows] = value.ravel()
            elif kind in ("s", "f"):
                K[rows, rows_of[kind]] = value
            else:
                quad_parts.setdefault(kind, {})[name[-1]] = value
        quad = []
        for kind in ("ss", "sf", "ff"):
            parts = quad_parts.get(kind)
            if not parts:
                continue
            if len(parts) == 2:
                quad.append((None, np.vstack([parts["s"], parts["f"]]), kind))
            else:
                (side, value), = parts.items()
                quad.append((rows_of[side], value, kind))
        quad = tuple(quad)
        return _Plan(c, K, quad, *_fuse(self.r_s, self.r_f, c, K, quad))

    def rhs(self, q: np.ndarray) -> np.ndarray:
        """Reduced right-hand side for one state (1-D) or each column of a matrix."""
        q = np.asarray(q, dtype=float)
        if q.ndim == 1:
            return self._rhs_vector(q)
        return self._rhs_matrix(q)

    def _rhs_vector(self, q: np.ndarray) -> np.ndarray:
        plan = self._plan
        r = q.size
        z = np.empty(plan.W.shape[1])
        z[:r] = q
        z[r] = 1.0
        np.multiply(q[plan.I], q[plan.J], out=z[r + 1:])
        return plan.W @ z

    def _rhs_matrix(self, Q: np.ndarray) -> np.ndarray:
        plan = self._plan
        out = plan.K @ Q if plan.K is not None else np.zeros_like(Q)
        if plan.c is not None:
            out += plan.c[:, None]
        qs, qf = Q[:self.r_s], Q[self.r_s:]
        for rows, M, kind in plan.quad:
            features = {
                "qq": lambda: columnwise_features(Q),
                "ss": lambda: columnwise_features(qs),
                "ff": lambda: columnwise_features(qf),
                "sf": lambda: columnwise_features(qs, qf),
            }[kind]()
            if rows is None:
                out += M @ features
            else:
                out[rows] += M @ features
        return out

    def to_monolithic(self) -> "OperatorSet":
        """Embed block operators into the equivalent monolithic (c, A, H)."""
        if self.kind == MONOLITHIC:
            return self
        r, r_s = self.r, self.r_s
        plan = self._plan
        c = plan.c if plan.c is not None else np.zeros(r)
        A = plan.K if plan.K is not None else np.zeros((r, r))
        H = np.zeros((r, compact_size(r)))
        kinds, cols = block_pair_columns(self.r_s, self.r_f)
        for name, value in self.blocks.items():
            kind = _feature_kind(name)
            if len(kind) != 2:
                continue
            rows = slice(0, r_s) if name.endswith("_s") else slice(r_s, r)
            where = np.flatnonzero(kinds == kind)
            H[rows, where] = value[:, cols[where]]
        return OperatorSet(MONOLITHIC, self.r_s, self.r_f, {"c": c, "A": A, "H": H})

    def parameter_count(self) -> int:
        return int(sum(value.size for value in self.blocks.values()))


def relative_block_errors(learned: OperatorSet, reference: OperatorSet) -> Dict[str, float]:
    """Relative Frobenius error per block; absolute when the reference block is zero."""
    errors = {}
    for name in sorted(set(learned.blocks) | set(reference.blocks)):
        diff = la.norm(learned.block(name) - reference.block(name))
        scale = la.norm(reference.block(name))
        errors[name] = float(diff / scale) if scale > 0 else float(diff)
    return errors


def write_operators(ops: OperatorSet, path):
    sections = {"meta": np.array([[1.0 if ops.kind == BLOCK else 0.0, ops.r_s, ops.r_f]])}
    sections.update(ops.blocks)
    return write_sections(sections, path)


def read_operators(path) -> OperatorSet:
    sections = read_sections(path)
    kind_flag, r_s, r_f = sections.pop("meta").ravel()
    return OperatorSet(BLOCK if kind_flag else MONOLITHIC, int(r_s), int(r_f), sections)


# Least squares ===============================================================

class LstsqProblem(NamedTuple):
    D: np.ndarray
    R: np.ndarray
    groups: Tuple[Tuple[str, slice], ...]


class TikhonovSolution(NamedTuple):
    O: np.ndarray
    rank: int
    rank_deficient: bool
    residual: float


def _check_columns(*arrays):
    counts = {np.shape(a)[1] for a in arrays if a is not None}
    if len(counts) > 1:
        raise ShapeError(f"column counts differ: {sorted(counts)}")


def assemble_monolithic(Q_hat, Qdot_hat, form: MonolithicForm = MonolithicForm()) -> LstsqProblem:
    """D̂ rows [1, q̂ᵀ, compact(q̂)ᵀ] and R̂ = Q̂dot."""
    Q_hat = np.atleast_2d(np.asarray(Q_hat, dtype=float))
    Qdot_hat = np.atleast_2d(np.asarray(Qdot_hat, dtype=float))
    _check_columns(Q_hat, Qdot_hat)
    if Qdot_hat.shape[0] != Q_hat.shape[0]:
        raise ShapeError(f"state has {Q_hat.shape[0]} rows, derivatives {Qdot_hat.shape[0]}")
    k = Q_hat.shape[1]
    columns, groups, start = [], [], 0
    for name, use, features in (
        ("c", form.constant, lambda: np.ones((1, k))),
        ("A", form.linear, lambda: Q_hat),
        ("H", form.quadratic, lambda: columnwise_features(Q_hat)),
    ):
        if use:
            block = features()
            columns.append(block)
            groups.append((name, slice(start, start + block.shape[0])))
            start += block.shape[0]
    D = np.vstack(columns).T if columns else np.zeros((k, 0))
    return LstsqProblem(D, Qdot_hat, tuple(groups))


def assemble_block(Q_s, Q_f, Qdot_target, mask: StructureMask, target: str) -> LstsqProblem:
    """Data matrix of one row of the block ODE, holding only LEARN feature groups."""
    Q_s = np.atleast_2d(np.asarray(Q_s, dtype=float))
    Q_f = np.atleast_2d(np.asarray(Q_f, dtype=float))
    R = np.array(np.atleast_2d(Qdot_target), dtype=float)
    _check_columns(Q_s, Q_f, R)
    expected_rows = Q_s.shape[0] if target == "structural" else Q_f.shape[0]
    if R.shape[0] != expected_rows:
        raise ShapeError(f"{target} derivatives need {expected_rows} rows, got {R.shape[0]}")
    mask.check(Q_s.shape[0], Q_f.shape[0])
    k = Q_s.shape[1]
    cache = {}

    def features(kind):
        if kind not in cache:
            cache[kind] = {
                "1": lambda: np.ones((1, k)),
                "s": lambda: Q_s,
                "f": lambda: Q_f,
                "ss": lambda: columnwise_features(Q_s),
                "sf": lambda: columnwise_features(Q_s, Q_f),
                "ff": lambda: columnwise_features(Q_f),
            }[kind]()
        return cache[kind]

    columns, groups, start = [], [], 0
    for name in _target_order(target):
        role = mask.roles[name]
        if role is Role.ZERO:
            continue
        F = features(_feature_kind(name))
        if role is Role.KNOWN:
            value = np.asarray(mask.known[name], dtype=float).reshape(R.shape[0], F.shape[0])
            R -= value @ F
            continue
        columns.append(F)
        groups.append((name, slice(start, start + F.shape[0])))
        start += F.shape[0]
    D = np.vstack(columns).T if columns else np.zeros((k, 0))
    return LstsqProblem(D, R, tuple(groups))


def solve_tikhonov(D, R, gamma) -> TikhonovSolution:
    """min ‖D Oᵀ − Rᵀ‖² + Σ_j γ_j ‖O[:, j]‖², via a pivoted-QR least-squares solve.

    `gamma` is a scalar or one weight per column of D. The regularization
    rows √γ are stacked under D so D is never squared into normal equations.
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    k, p = D.shape
    if p < 1:
        raise ShapeError("least-squares problem has no unknowns")
    if R.shape[1] != k:
        raise ShapeError(f"D has {k} rows but R has {R.shape[1]} columns")
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (p,))
    if np.any(gamma < 0):
        raise ValueError("regularization weights must be nonnegative")

    penalized = np.flatnonzero(gamma > 0)
    Gamma = np.zeros((penalized.size, p))
    Gamma[np.arange(penalized.size), penalized] = np.sqrt(gamma[penalized])
    lhs = np.vstack([D, Gamma])
    rhs = np.vstack([R.T, np.zeros((penalized.size, R.shape[0]))])
    X, _, rank, _ = la.lstsq(lhs, rhs, lapack_driver="gelsy", check_finite=False)
    rank = int(rank)
    deficient = rank < p
    if deficient:
        warnings.warn(
            f"least-squares problem is rank deficient (rank {rank} < {p} unknowns); "
            "returning the minimum-norm solution",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    O = X.T
    residual = float(la.norm(D @ X - R.T))
    return TikhonovSolution(O, rank, deficient, residual)


def _group_gammas(groups, weight_of) -> np.ndarray:
    p = groups[-1][1].stop if groups else 0
    gamma = np.zeros(p)
    for name, cols in groups:
        gamma[cols] = weight_of(name)
    return gamma


def block_gamma(name: str, weights: RegWeights) -> float:
    nonlinear = name[0] in "HLG"
    if name.endswith("_s"):
        return weights.s_quadratic if nonlinear else weights.s_linear
    return weights.f_quadratic if nonlinear else weights.f_linear


def monolithic_gamma(name: str, weights: MonolithicRegWeights) -> float:
    return {"c": weights.constant, "A": weights.linear, "H": weights.quadratic}[name]


class InferenceResult(NamedTuple):
    operators: OperatorSet
    rank_deficient: bool
    solutions: Dict[str, TikhonovSolution]


def infer_monolithic(Q_hat, Qdot_hat, r_s: int, r_f: int, weights: MonolithicRegWeights,
                     form: MonolithicForm = MonolithicForm()) -> InferenceResult:
    problem = assemble_monolithic(Q_hat, Qdot_hat, form)
    if Q_hat.shape[0] != r_s + r_f:
        raise ShapeError(f"reduced state has {Q_hat.shape[0]} rows, expected r_s + r_f = {r_s + r_f}")
    solution = solve_tikhonov(problem.D, problem.R, _group_gammas(problem.groups, lambda n: monolithic_gamma(n, weights)))
    blocks = {name: solution.O[:, cols] for name, cols in problem.groups}
    ops = OperatorSet(MONOLITHIC, r_s, r_f, blocks)
    return InferenceResult(ops, solution.rank_deficient, {"monolithic": solution})


def infer_block(Q_s, Q_f, Qdot_s, Qdot_f, mask: StructureMask, weights: RegWeights) -> InferenceResult:
    """Two independent subproblems, one per physics row of the block ODE."""
    Q_s = np.atleast_2d(Q_s)
    Q_f = np.atleast_2d(Q_f)
    blocks: Dict[str, np.ndarray] = {}
    solutions = {}
    deficient = False
    for target, Qdot in (("structural", Qdot_s), ("fluid", Qdot_f)):
        problem = assemble_block(Q_s, Q_f, Qdot, mask, target)
        if problem.groups:
            solution = solve_tikhonov(problem.D, problem.R, _group_gammas(problem.groups, lambda n: block_gamma(n, weights)))
            blocks.update({name: solution.O[:, cols] for name, cols in problem.groups})
            solutions[target] = solution
            deficient = deficient or solution.rank_deficient
    for name, role in mask.roles.items():
        if role is Role.KNOWN:
            blocks[name] = mask.known[name]
    ops = OperatorSet(BLOCK, Q_s.shape[0], Q_f.shape[0], blocks)
    return InferenceResult(ops, deficient, solutions)


def infer(method: str, Q_hat, Qdot_hat, r_s: int, r_f: int,
          mask: Optional[StructureMask] = None,
          weights: Union[RegWeights, MonolithicRegWeights, None] = None,
          form: MonolithicForm = MonolithicForm()) -> InferenceResult:
    """Infer reduced operators from column-aligned reduced states and derivatives."""
    Q_hat = np.atleast_2d(np.asarray(Q_hat, dtype=float))
    Qdot_hat = np.atleast_2d(np.asarray(Qdot_hat, dtype=float))
    _check_columns(Q_hat, Qdot_hat)
    if method == MONOLITHIC:
        return infer_monolithic(Q_hat, Qdot_hat, r_s, r_f, weights or MonolithicRegWeights(), form)
    if method == BLOCK:
        return infer_block(
            Q_hat[:r_s], Q_hat[r_s:], Qdot_hat[:r_s], Qdot_hat[r_s:],
            mask or StructureMask.agard(), weights or RegWeights(),
        )
    raise ValueError(f"unknown inference method '{method}'")


# Intrusive projection ========================================================

def _project_quadratic(H: np.ndarray, V_out: np.ndarray, V_in: np.ndarray) -> np.ndarray:
    """Galerkin projection of a compact quadratic operator (expand, project, re-compact)."""
    n_in, r_in = V_in.shape
    full = expand_compact(H, n_in).reshape(H.shape[0], n_in, n_in)
    projected = np.einsum("ai,ajk,jp,kq->ipq", V_out, full, V_in, V_in, optimize=True)
    return compress_full(projected.reshape(V_out.shape[1], r_in * r_in), r_in)


def _project_bilinear(L: np.ndarray, V_out: np.ndarray, V_s: np.ndarray, V_f: np.ndarray) -> np.ndarray:
    full = L.reshape(L.shape[0], V_s.shape[0], V_f.shape[0])
    projected = np.einsum("ai,ajk,jp,kq->ipq", V_out, full, V_s, V_f, optimize=True)
    return projected.reshape(V_out.shape[1], V_s.shape[1] * V_f.shape[1])


def intrusive_project(fom: CoupledFom, basis: CoupledBasis) -> OperatorSet:
    """Galerkin reduced operators of the FOM; blocks that vanish in the FOM stay absent."""
    if basis.n_s != fom.n_s or basis.n_f != fom.n_f:
        raise ShapeError(
            f"basis spans ({basis.n_s}, {basis.n_f}) rows, FOM has ({fom.n_s}, {fom.n_f})"
        )
    V = {"s": basis.structural.vectors, "f": basis.fluid.vectors}
    blocks = {}
    for name in fom.active:
        value = fom.blocks[name]
        own, other = ("s", "f") if name.endswith("_s") else ("f", "s")
        head = name[0]
        if head == "c":
            blocks[name] = V[own].T @ value
        elif head == "A":
            blocks[name] = V[own].T @ value @ V[own]
        elif head == "E":
            blocks[name] = V[own].T @ value @ V[other]
        elif head == "H":
            blocks[name] = _project_quadratic(value, V[own], V[own])
        elif head == "G":
            blocks[name] = _project_quadratic(value, V[own], V[other])
        else:
            blocks[name] = _project_bilinear(value, V[own], V["s"], V["f"])
    return OperatorSet(BLOCK, basis.r_s, basis.r_f, blocks)


# Complexity ==================================================================

def count_parameters(method: str, r_s: int, r_f: int, mask: Optional[StructureMask] = None,
                     form: MonolithicForm = MonolithicForm()) -> int:
    """Number of operator entries learned by the least-squares problem(s)."""
    if r_s < 1 or r_f < 1:
        raise ShapeError("reduced dimensions must be positive")
    if method == MONOLITHIC:
        r = r_s + r_f
        return int(form.constant) * r + int(form.linear) * r * r + int(form.quadratic) * r * compact_size(r)
    if method == BLOCK:
        mask = mask or StructureMask.agard()
        total = 0
        for name, role in mask.roles.items():
            if role is Role.LEARN:
                rows, cols = block_shape(name, r_s, r_f)
                total += rows * cols
        return total
    raise ValueError(f"unknown inference method '{method}'")
