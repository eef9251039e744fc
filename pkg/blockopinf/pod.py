"""Proper orthogonal decomposition of snapshot matrices."""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import linalg as la

from .errors import DegenerateError, DomainError, InvalidDimensionError, ShapeError
from .snapshots import SnapshotSet, format_float, read_sections, write_sections

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ReducedBasis:
    """Orthonormal columns `vectors` (n × r) with the full singular spectrum."""

    vectors: np.ndarray
    singular_values: np.ndarray

    def __post_init__(self):
        vectors = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        sigma = np.asarray(self.singular_values, dtype=float).ravel()
        if np.any(np.diff(sigma) > 1e-12 * max(sigma.max(initial=0.0), 1.0)):
            raise DomainError("singular values must be nonincreasing")
        vectors.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "singular_values", sigma)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def r(self) -> int:
        return self.vectors.shape[1]

    def truncate(self, r: int) -> "ReducedBasis":
        if not 1 <= r <= self.vectors.shape[1]:
            raise InvalidDimensionError(f"rank {r} outside [1, {self.vectors.shape[1]}]")
        return ReducedBasis(self.vectors[:, :r], self.singular_values)

    @classmethod
    def identity(cls, n: int) -> "ReducedBasis":
        return cls(np.eye(n), np.ones(n))

    def project(self, Q) -> np.ndarray:
        return project(self, Q)

    def reconstruct(self, Q_reduced) -> np.ndarray:
        return reconstruct(self, Q_reduced)


@dataclass(frozen=True, eq=False)
class CoupledBasis:
    """Block-diagonal basis diag(V_s, V_f) over the stacked [structural; fluid] state."""

    structural: ReducedBasis
    fluid: ReducedBasis

    @property
    def r_s(self) -> int:
        return self.structural.r

    @property
    def r_f(self) -> int:
        return self.fluid.r

    @property
    def r(self) -> int:
        return self.r_s + self.r_f

    @property
    def n_s(self) -> int:
        return self.structural.n

    @property
    def n_f(self) -> int:
        return self.fluid.n

    def matrix(self) -> np.ndarray:
        return la.block_diag(self.structural.vectors, self.fluid.vectors)

    def project(self, Q) -> np.ndarray:
        Q = np.asarray(Q, dtype=float)
        if Q.shape[0] != self.n_s + self.n_f:
            raise ShapeError(f"stacked state needs {self.n_s + self.n_f} rows, got {Q.shape[0]}")
        return np.concatenate(
            [self.structural.project(Q[:self.n_s]), self.fluid.project(Q[self.n_s:])], axis=0
        )

    def reconstruct(self, Q_reduced) -> np.ndarray:
        Q_reduced = np.asarray(Q_reduced, dtype=float)
        if Q_reduced.shape[0] != self.r:
            raise ShapeError(f"reduced state needs {self.r} rows, got {Q_reduced.shape[0]}")
        return np.concatenate(
            [self.structural.reconstruct(Q_reduced[:self.r_s]), self.fluid.reconstruct(Q_reduced[self.r_s:])],
            axis=0,
        )


def _fix_signs(U: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive (first such row wins)."""
    rows = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[rows, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def compute_pod(S: Union[SnapshotSet, np.ndarray], method: str = "svd") -> ReducedBasis:
    """Full thin POD (r = min(n, k)) of a snapshot matrix.

    `method="gram"` uses the method of snapshots (eigendecomposition of QᵀQ),
    worthwhile when n ≫ k.
    """
    Q = S.data if isinstance(S, SnapshotSet) else np.atleast_2d(np.asarray(S, dtype=float))
    if Q.size == 0:
        raise InvalidDimensionError("cannot decompose an empty snapshot matrix")
    if not np.all(np.isfinite(Q)):
        raise DomainError("snapshot matrix contains non-finite entries")

    if method == "svd":
        U, sigma, _ = la.svd(Q, full_matrices=False)
    elif method == "gram":
        evals, W = la.eigh(Q.T @ Q)
        order = np.argsort(evals)[::-1]
        evals, W = evals[order], W[:, order]
        sigma = np.sqrt(np.clip(evals, 0.0, None))
        rank = min(Q.shape)
        sigma, W = sigma[:rank], W[:, :rank]
        U = np.zeros((Q.shape[0], rank))
        keep = sigma > sigma[0] * np.finfo(float).eps * max(Q.shape) if sigma[0] > 0 else np.zeros(rank, bool)
        U[:, keep] = (Q @ W[:, keep]) / sigma[keep]
        if not np.all(keep):
            # Complete the basis for numerically null directions.
            Qfull, _ = la.qr(U[:, keep], mode="full")
            U[:, ~keep] = Qfull[:, int(keep.sum()):rank]
    else:
        raise ValueError(f"unknown POD method '{method}'")

    logger.debug(f"POD of {Q.shape[0]}x{Q.shape[1]} snapshots, leading sigma {sigma[0]:.6g}")
    return ReducedBasis(_fix_signs(U), sigma)


def cumulative_energy(sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float).ravel()
    if sigma.size == 0 or np.any(sigma < 0):
        raise DomainError("singular values must be nonnegative")
    if np.any(np.diff(sigma) > 0):
        raise DomainError("singular values must be nonincreasing")
    energy = np.cumsum(sigma**2)
    if energy[-1] == 0:
        raise DegenerateError("all singular values are zero")
    energy = energy / energy[-1]
    energy[-1] = 1.0
    return energy


def select_rank(sigma, threshold: float) -> int:
    """Smallest r whose leading r modes capture `threshold` of the energy."""
    if not 0 < threshold <= 1:
        raise DomainError(f"energy threshold must lie in (0, 1], got {threshold}")
    energy = cumulative_energy(sigma)
    return int(np.searchsorted(energy, threshold - 1e-15) + 1)


def project(B: ReducedBasis, Q) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.shape[0] != B.n:
        raise ShapeError(f"basis has {B.n} rows, state has {Q.shape[0]}")
    return B.vectors.T @ Q


def reconstruct(B: ReducedBasis, Q_reduced) -> np.ndarray:
    Q_reduced = np.asarray(Q_reduced, dtype=float)
    if Q_reduced.shape[0] != B.r:
        raise ShapeError(f"basis has rank {B.r}, reduced state has {Q_reduced.shape[0]} rows")
    return B.vectors @ Q_reduced


def write_basis(B: ReducedBasis, path) -> Path:
    return write_sections({"vectors": B.vectors, "singular_values": B.singular_values[None, :]}, path)


def read_basis(path) -> ReducedBasis:
    sections = read_sections(path)
    return ReducedBasis(sections["vectors"], sections["singular_values"].ravel())


def spectrum_to_csv(sigma, path) -> Path:
    path = Path(path)
    energy = cumulative_energy(sigma)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "sigma", "energy"])
        for i, (s, e) in enumerate(zip(sigma, energy), start=1):
            writer.writerow([i, format_float(s), format_float(e)])
    return path
