"""Quadratic feature maps.

Compact self-Kronecker products keep the d(d+1)/2 unique entries of q ⊗ q,
ordered lexicographically by index pair (i, j) with i <= j. Off-diagonal
products are stored raw (no factor 2); learned operators absorb the symmetry.
"""

import logging
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np

from .errors import InvalidDimensionError, ShapeError

logger = logging.getLogger(__name__)


class QuadIndexMap:
    """Lexicographic (i, j), i <= j, index pairs of a compact quadratic."""

    def __init__(self, dim: int):
        if dim < 1:
            raise InvalidDimensionError(f"dimension must be positive, got {dim}")
        self.dim = dim
        rows, cols = np.triu_indices(dim)
        self.rows = rows
        self.cols = cols
        self.flat = rows * dim + cols
        self._lookup = np.full((dim, dim), -1, dtype=np.intp)
        self._lookup[rows, cols] = np.arange(rows.size)
        self._lookup[cols, rows] = np.arange(rows.size)

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        return list(zip(self.rows.tolist(), self.cols.tolist()))

    def __len__(self) -> int:
        return self.dim * (self.dim + 1) // 2

    def index(self, i: int, j: int) -> int:
        """Column of the product q_i q_j (0-based, either order)."""
        return int(self._lookup[i, j])


@lru_cache(maxsize=64)
def quad_index_map(dim: int) -> QuadIndexMap:
    return QuadIndexMap(dim)


def compact_size(dim: int) -> int:
    return dim * (dim + 1) // 2


def _as_vector(v, name: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise InvalidDimensionError(f"{name} must be a nonempty 1-D array, got shape {v.shape}")
    return v


def compact_self_kron(v) -> np.ndarray:
    v = _as_vector(v)
    return np.take(np.outer(v, v), quad_index_map(v.size).flat)


def cross_kron(a, b) -> np.ndarray:
    a = _as_vector(a, "a")
    b = _as_vector(b, "b")
    return np.outer(a, b).ravel()


def columnwise_features(Q, other: Optional[np.ndarray] = None) -> np.ndarray:
    """Feature map applied to every column.

    With `other` omitted this is the compact self product of each column of
    `Q`; otherwise the cross product of matching columns of `Q` and `other`.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] == 0:
        raise InvalidDimensionError(f"expected a 2-D array with rows, got shape {Q.shape}")
    if other is None:
        idx = quad_index_map(Q.shape[0])
        return Q[idx.rows] * Q[idx.cols]

    other = np.asarray(other, dtype=float)
    if other.ndim != 2 or other.shape[0] == 0:
        raise InvalidDimensionError(f"expected a 2-D array with rows, got shape {other.shape}")
    if other.shape[1] != Q.shape[1]:
        raise ShapeError(f"column counts differ ({Q.shape[1]} != {other.shape[1]})")
    k = Q.shape[1]
    return (Q[:, None, :] * other[None, :, :]).reshape(Q.shape[0] * other.shape[0], k)


def expand_compact(H, dim: int) -> np.ndarray:
    """Compact operator (m × d(d+1)/2) to full Kronecker columns (m × d²).

    Off-diagonal coefficients are split evenly between (i, j) and (j, i) so
    the full operator is symmetric in its last two indices.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    idx = quad_index_map(dim)
    if H.shape[1] != len(idx):
        raise ShapeError(f"compact operator needs {len(idx)} columns, got {H.shape[1]}")
    full = np.zeros((H.shape[0], dim * dim))
    diag = idx.rows == idx.cols
    full[:, idx.flat[diag]] = H[:, diag]
    off = ~diag
    full[:, idx.rows[off] * dim + idx.cols[off]] = H[:, off] / 2
    full[:, idx.cols[off] * dim + idx.rows[off]] = H[:, off] / 2
    return full


def compress_full(Hfull, dim: int) -> np.ndarray:
    """Full Kronecker columns (m × d²) to compact form, summing (i, j) and (j, i)."""
    Hfull = np.atleast_2d(np.asarray(Hfull, dtype=float))
    if Hfull.shape[1] != dim * dim:
        raise ShapeError(f"full operator needs {dim * dim} columns, got {Hfull.shape[1]}")
    idx = quad_index_map(dim)
    upper = Hfull[:, idx.rows * dim + idx.cols]
    lower = Hfull[:, idx.cols * dim + idx.rows]
    return np.where(idx.rows == idx.cols, upper, upper + lower)


def block_pair_columns(r_s: int, r_f: int) -> Tuple[np.ndarray, np.ndarray]:
    """Locate each compact column of the stacked state q = [q_s; q_f] in the block features.

    Returns (kinds, cols): kinds[p] is "ss", "sf" or "ff" and cols[p] the column
    of compact(q_s), q_s⊗q_f or compact(q_f) holding the same product.
    """
    full = quad_index_map(r_s + r_f)
    kinds = np.empty(len(full), dtype="<U2")
    cols = np.empty(len(full), dtype=np.intp)
    idx_s = quad_index_map(r_s)
    idx_f = quad_index_map(r_f)
    for p, (i, j) in enumerate(full.pairs):
        if j < r_s:
            kinds[p], cols[p] = "ss", idx_s.index(i, j)
        elif i < r_s:
            kinds[p], cols[p] = "sf", i * r_f + (j - r_s)
        else:
            kinds[p], cols[p] = "ff", idx_f.index(i - r_s, j - r_s)
    return kinds, cols
