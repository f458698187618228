"""
Dense matrix helpers shared by every other module.

Matrices are plain float64 numpy arrays. The helpers here validate them,
factor them, and pick rows and columns through IndexSet, which is the
implicit form of a column or row sampling matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np
from scipy import linalg as sla

from app.exceptions import PreconditionError

DEFAULT_RANK_TOL = 1e-8
ORTHONORMAL_TOL = 1e-10


def as_matrix(A, name: str = "matrix", allow_empty: bool = False) -> np.ndarray:
    """Coerce A to a finite two-dimensional float64 array."""
    arr = np.asarray(A, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise PreconditionError(f"{name} must be two-dimensional, got ndim={arr.ndim}")
    if not allow_empty and (arr.shape[0] == 0 or arr.shape[1] == 0):
        raise PreconditionError(f"{name} must have a positive shape, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise PreconditionError(f"{name} contains NaN or Inf entries")
    return arr


def relative_error(truth: np.ndarray, estimate: np.ndarray) -> float:
    """||truth - estimate||_F / ||truth||_F"""
    denom = np.linalg.norm(truth)
    if denom == 0.0:
        return float(np.linalg.norm(estimate))
    return float(np.linalg.norm(truth - estimate) / denom)


# -----------------------------------------------------------------------------
# Index sets
# -----------------------------------------------------------------------------


@dataclass(frozen=True)
class IndexSet:
    """Ordered, duplicate-free indices into a dimension of size domain_size."""

    indices: tuple[int, ...]
    domain_size: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if self.domain_size < 0:
            raise PreconditionError(f"domain_size must be nonnegative, got {self.domain_size}")
        if len(set(idx)) != len(idx):
            raise PreconditionError("index set contains duplicates")
        for i in idx:
            if i < 0 or i >= self.domain_size:
                raise PreconditionError(f"index {i} outside [0, {self.domain_size})")

    @classmethod
    def empty(cls, domain_size: int) -> IndexSet:
        return cls((), domain_size)

    @classmethod
    def full(cls, domain_size: int) -> IndexSet:
        return cls(tuple(range(domain_size)), domain_size)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices)

    def __contains__(self, item) -> bool:
        return item in self.indices

    def as_array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.intp)

    def compose(self, other: IndexSet) -> IndexSet:
        """Index set picking other's positions out of self (I∘J)."""
        if other.domain_size != len(self):
            raise PreconditionError(
                f"cannot compose: inner domain {other.domain_size} != outer size {len(self)}"
            )
        return IndexSet(tuple(self.indices[j] for j in other), self.domain_size)

    def extend(self, extra: Iterable[int]) -> IndexSet:
        return IndexSet(self.indices + tuple(int(i) for i in extra), self.domain_size)

    def complement(self) -> np.ndarray:
        mask = np.ones(self.domain_size, dtype=bool)
        mask[self.as_array()] = False
        return np.flatnonzero(mask)


def select_columns(A: np.ndarray, index_set: IndexSet) -> np.ndarray:
    """Columns of A in IndexSet order (D S1)."""
    A = np.asarray(A, dtype=np.float64)
    if index_set.domain_size != A.shape[1]:
        raise PreconditionError(
            f"column index set over {index_set.domain_size} columns, matrix has {A.shape[1]}"
        )
    return A[:, index_set.as_array()]


def select_rows(A: np.ndarray, index_set: IndexSet) -> np.ndarray:
    """Rows of A in IndexSet order (S2^T D)."""
    A = np.asarray(A, dtype=np.float64)
    if index_set.domain_size != A.shape[0]:
        raise PreconditionError(
            f"row index set over {index_set.domain_size} rows, matrix has {A.shape[0]}"
        )
    return A[index_set.as_array(), :]


# -----------------------------------------------------------------------------
# Subspaces
# -----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    """Matrix with orthonormal columns spanning a learned subspace."""

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=np.float64)
        if mat.ndim != 2:
            raise PreconditionError("basis matrix must be two-dimensional")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        deviation = gram_deviation(mat)
        if deviation > ORTHONORMAL_TOL:
            raise PreconditionError(f"basis columns not orthonormal (deviation {deviation:.2e})")

    @classmethod
    def orthonormalize(cls, A: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> SubspaceBasis:
        return orthonormal_range(A, rank_tol)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def T(self) -> np.ndarray:
        return self.matrix.T

    def rows(self, index_set: IndexSet) -> np.ndarray:
        return select_rows(self.matrix, index_set)

    def project(self, X: np.ndarray) -> np.ndarray:
        return self.matrix @ (self.matrix.T @ X)

    def angles_to(self, other: SubspaceBasis | np.ndarray) -> np.ndarray:
        """Principal angles in radians, largest first."""
        other_mat = other.matrix if isinstance(other, SubspaceBasis) else np.asarray(other)
        return sla.subspace_angles(self.matrix, other_mat)

    def __repr__(self) -> str:
        return f"<SubspaceBasis({self.ambient_dim}x{self.dim})>"


def gram_deviation(M: np.ndarray) -> float:
    """Max-abs deviation of M^T M from the identity."""
    if M.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(M.T @ M - np.eye(M.shape[1]))))


def svd_compact(
    A: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL
) -> tuple[SubspaceBasis, np.ndarray, SubspaceBasis]:
    """
    Compact SVD truncated to numerical rank.

    Singular values at or below rank_tol * sigma_1 are dropped.
    """
    A = as_matrix(A)
    U, sigma, Vt = np.linalg.svd(A, full_matrices=False)
    if sigma.size == 0 or sigma[0] == 0.0:
        raise PreconditionError("zero matrix has no compact SVD")
    r = int(np.count_nonzero(sigma > rank_tol * sigma[0]))
    return SubspaceBasis(U[:, :r]), sigma[:r].copy(), SubspaceBasis(Vt[:r, :].T)


def orthonormal_range(A: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> SubspaceBasis:
    """Orthonormal basis for range(A) at numerical rank."""
    U, _, _ = svd_compact(A, rank_tol)
    return U


def numerical_rank(A: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    """Count of singular values above rank_tol * sigma_1 (0 for a zero matrix)."""
    A = np.asarray(A, dtype=np.float64)
    if A.size == 0:
        return 0
    sigma = np.linalg.svd(A, compute_uv=False)
    if sigma[0] == 0.0:
        return 0
    return int(np.count_nonzero(sigma > rank_tol * sigma[0]))


def project_complement(C: np.ndarray, B: np.ndarray) -> np.ndarray:
    """(I - P_span(C)) B. An empty or zero C leaves B unchanged."""
    C = np.asarray(C, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if C.ndim == 1:
        C = C.reshape(-1, 1)
    if C.shape[0] != B.shape[0]:
        raise PreconditionError(f"row counts differ: C has {C.shape[0]}, B has {B.shape[0]}")
    if C.shape[1] == 0 or not np.any(C):
        return B.copy()
    Q = orthonormal_range(C).matrix
    return B - Q @ (Q.T @ B)


def truncate_rank(A: np.ndarray, r: int, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Best rank-r approximation of A; lower-rank input comes back unchanged."""
    U, sigma, V = svd_compact(A, rank_tol)
    if sigma.size <= r:
        return np.asarray(A, dtype=np.float64).copy()
    return (U.matrix[:, :r] * sigma[:r]) @ V.matrix[:, :r].T
