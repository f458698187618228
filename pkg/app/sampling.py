"""
Column and row selection.

uniform_indices draws without replacement. informative_columns is the
greedy novelty sampler: each repeat seeds with one column and keeps adding
the column with the largest residual outside the span of what it already
picked, until nothing left clears the novelty threshold. alternating_sample
bounces that sampler between a row sketch and a column sketch of corrupted
data until the rank of the row sketch stops changing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.exceptions import PreconditionError
from app.matrix import IndexSet, as_matrix, numerical_rank, select_columns, select_rows
from app.solvers import SolverConfig, noise_budget, pcp_alm, stable_pcp

logger = logging.getLogger(__name__)

EXACT_TOL = 1e-10
PCP_TOL = 1e-6


class InformativeConfig(BaseModel):
    """Settings for informative_columns. tau=None means tau_rel * ||A||_F."""

    model_config = ConfigDict(frozen=True)

    C: int = Field(1, ge=1)
    tau: Optional[float] = Field(None, gt=0.0)
    tau_rel: float = Field(1e-8, gt=0.0)
    seeding: Literal["uniform", "leverage"] = "uniform"
    max_samples: Optional[int] = Field(None, ge=1)

    def threshold_for(self, A: np.ndarray) -> float:
        return self.tau if self.tau is not None else self.tau_rel * float(np.linalg.norm(A))


class AlternatingConfig(BaseModel):
    """
    Settings for alternating_sample.

    rank_tol and tau_rel default to 1e-10 on exact data (skip_pcp) and
    1e-6 after a PCP solve. noise_sigma > 0 decomposes each sketch with
    stable_pcp under the matching Frobenius budget.
    """

    model_config = ConfigDict(frozen=True)

    C_r: int = Field(3, ge=1)
    r_hat: int = Field(..., ge=1)
    T: int = Field(2, ge=2)
    max_cycles: int = Field(10, ge=1)
    pcp: SolverConfig = Field(default_factory=SolverConfig)
    rank_tol: Optional[float] = Field(None, gt=0.0)
    tau_rel: Optional[float] = Field(None, gt=0.0)
    augment: int = Field(0, ge=0)
    skip_pcp: bool = False
    noise_sigma: float = Field(0.0, ge=0.0)

    @property
    def sketch_size(self) -> int:
        return self.C_r * self.r_hat

    @property
    def exact_tol(self) -> float:
        return EXACT_TOL if self.skip_pcp else PCP_TOL

    @property
    def effective_rank_tol(self) -> float:
        return self.rank_tol if self.rank_tol is not None else self.exact_tol

    @property
    def effective_tau_rel(self) -> float:
        return self.tau_rel if self.tau_rel is not None else self.exact_tol


Alg2Config = InformativeConfig
Alg3Config = AlternatingConfig


@dataclass
class AlternatingResult:
    """Outcome of alternating_sample; row_idx is the row set low_rank was computed from."""

    row_idx: IndexSet
    col_idx: IndexSet
    low_rank: np.ndarray
    rank_trace: list[int]
    col_rank_trace: list[int] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def cycles(self) -> int:
        return len(self.rank_trace)


# -----------------------------------------------------------------------------
# Uniform sampling
# -----------------------------------------------------------------------------


def uniform_indices(n: int, m: int, rng: np.random.Generator) -> IndexSet:
    """m distinct indices out of range(n), uniformly at random."""
    if m < 0:
        raise PreconditionError(f"sample size must be nonnegative, got {m}")
    if m > n:
        raise PreconditionError(f"cannot sample {m} of {n} indices without replacement")
    return IndexSet(tuple(rng.choice(n, size=m, replace=False)), n)


def augment_random(index_set: IndexSet, n_extra: int, rng: np.random.Generator) -> IndexSet:
    """Append n_extra uniformly random indices not already present."""
    if n_extra < 0:
        raise PreconditionError(f"n_extra must be nonnegative, got {n_extra}")
    if n_extra == 0:
        return index_set
    remaining = index_set.complement()
    if n_extra > remaining.size:
        raise PreconditionError(
            f"cannot add {n_extra} indices, only {remaining.size} remain unselected"
        )
    return index_set.extend(rng.choice(remaining, size=n_extra, replace=False))


# -----------------------------------------------------------------------------
# Informative sampling
# -----------------------------------------------------------------------------


def _leverage_probabilities(B: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Column leverage scores of B restricted to candidates."""
    _, s, Vt = np.linalg.svd(B, full_matrices=False)
    k = int(np.count_nonzero(s > 1e-8 * s[0]))
    scores = np.sum(Vt[:k, candidates] ** 2, axis=0)
    total = scores.sum()
    if total <= 0:
        return np.full(candidates.size, 1.0 / candidates.size)
    return scores / total


def _pick_seed(
    B: np.ndarray, candidates: np.ndarray, cfg: InformativeConfig, rng: np.random.Generator
) -> int:
    if cfg.seeding == "leverage":
        return int(rng.choice(candidates, p=_leverage_probabilities(B, candidates)))
    return int(rng.choice(candidates))


def informative_columns(
    A: np.ndarray, cfg: InformativeConfig | None = None, rng: np.random.Generator | None = None
) -> IndexSet:
    """
    Greedy column sampler spanning range(A) with few columns per repeat.

    Each of cfg.C repeats runs on A with the previously chosen columns
    zeroed: seed one nonzero column, then repeatedly take the column whose
    residual outside the chosen span is largest, provided that residual is
    at least tau. Ties go to the lowest index. Output is in selection order.
    """
    A = as_matrix(A, "A")
    cfg = cfg or InformativeConfig()
    rng = rng if rng is not None else np.random.default_rng()
    if not np.any(A):
        raise PreconditionError("no nonzero columns")

    tau = cfg.threshold_for(A)
    cap = cfg.max_samples or A.shape[1]
    B = A.copy()
    selected: list[int] = []

    for repeat in range(cfg.C):
        if len(selected) >= cap:
            break
        if selected:
            B[:, selected] = 0.0
        candidates = np.flatnonzero(np.any(B != 0.0, axis=0))
        if candidates.size == 0:
            logger.info(f"informative_columns: no nonzero columns left for repeat {repeat + 1}")
            break

        seed = _pick_seed(B, candidates, cfg, rng)
        selected.append(seed)
        E = B.copy()
        q = E[:, seed] / np.linalg.norm(E[:, seed])
        E -= np.outer(q, q @ E)

        while len(selected) < cap:
            residual = np.linalg.norm(E, axis=0)
            residual[selected] = -1.0
            j = int(np.argmax(residual))
            if residual[j] < tau:
                break
            selected.append(j)
            q = E[:, j] / residual[j]
            E -= np.outer(q, q @ E)
            # reorthogonalize
            E -= np.outer(q, q @ E)

    return IndexSet(tuple(selected), A.shape[1])


# -----------------------------------------------------------------------------
# Alternating sampling
# -----------------------------------------------------------------------------


def _low_rank_part(M: np.ndarray, cfg: AlternatingConfig, warnings: list[str], label: str):
    if cfg.skip_pcp:
        return M
    if not np.any(M):
        raise PreconditionError(f"{label} sketch is all zero")
    if cfg.noise_sigma > 0:
        dec = stable_pcp(M, cfg.pcp, noise_budget(M.shape, cfg.noise_sigma))
    else:
        dec = pcp_alm(M, cfg.pcp)
    if not dec.converged:
        msg = f"{label} sketch decomposition did not converge ({dec.constraint_residual:.2e})"
        logger.warning(msg)
        warnings.append(msg)
    return dec.low_rank


def alternating_sample(
    D: np.ndarray, cfg: AlternatingConfig, rng: np.random.Generator
) -> AlternatingResult:
    """
    Alternate informative row and column selection on corrupted data.

    One cycle: decompose the row sketch D_w, pick informative columns of
    its low-rank part, decompose the resulting column sketch D_c, pick
    informative rows of that low-rank part, and form the next D_w. Stops
    once rank(L_w) has been the same for cfg.T consecutive cycles; a rank
    still below cfg.r_hat never counts as settled.
    """
    D = as_matrix(D, "D")
    n1, n2 = D.shape
    m = cfg.sketch_size
    if m > n1 or m > n2:
        raise PreconditionError(f"C_r * r_hat = {m} exceeds matrix shape {D.shape}")

    sampler = InformativeConfig(C=cfg.C_r, tau_rel=cfg.effective_tau_rel, max_samples=m)
    rows = uniform_indices(n1, m, rng)
    result = AlternatingResult(
        row_idx=rows, col_idx=IndexSet.empty(n2), low_rank=np.zeros((m, n2)), rank_trace=[]
    )
    streak = 0

    for cycle in range(1, cfg.max_cycles + 1):
        L_w = _low_rank_part(select_rows(D, rows), cfg, result.warnings, "row")
        rank_w = numerical_rank(L_w, cfg.effective_rank_tol)
        if rank_w < cfg.r_hat:
            streak = 0
        elif result.rank_trace and result.rank_trace[-1] == rank_w:
            streak += 1
        else:
            streak = 1
        result.rank_trace.append(rank_w)
        cols = informative_columns(L_w, sampler, rng)
        if cfg.augment:
            cols = augment_random(cols, min(cfg.augment, n2 - len(cols)), rng)
        result.row_idx, result.col_idx, result.low_rank = rows, cols, L_w
        logger.debug(f"alternating_sample cycle {cycle}: rank(L_w)={rank_w}, {len(cols)} columns")

        if streak >= cfg.T or cycle == cfg.max_cycles:
            break

        L_c = _low_rank_part(select_columns(D, cols), cfg, result.warnings, "column")
        result.col_rank_trace.append(numerical_rank(L_c, cfg.effective_rank_tol))
        rows = informative_columns(L_c.T, sampler, rng)
        if cfg.augment:
            rows = augment_random(rows, min(cfg.augment, n1 - len(rows)), rng)

    logger.info(
        f"alternating_sample finished after {result.cycles} cycles, rank trace {result.rank_trace}"
    )
    return result
