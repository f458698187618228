"""
End-to-end sketch decompositions.

decompose_uniform learns the column space from uniformly sampled columns
and the representation from uniformly sampled rows. decompose_informative
replaces both samplings with informative_columns driven by a row sketch.
online_init / online_push track a slowly moving column space over a stream.

With noise_sigma > 0 every sketch goes through stable_pcp and every l1 fit
through l1_fit_noisy, with budgets sized from the noise level.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.exceptions import ConvergenceError, PreconditionError
from app.matrix import (
    IndexSet,
    SubspaceBasis,
    as_matrix,
    numerical_rank,
    orthonormal_range,
    select_columns,
    select_rows,
    truncate_rank,
)
from app.sampling import (
    AlternatingConfig,
    InformativeConfig,
    alternating_sample,
    informative_columns,
    uniform_indices,
)
from app.solvers import (
    Decomposition,
    L1Config,
    SolverConfig,
    l1_fit_detailed,
    l1_fit_noisy,
    noise_budget,
    pcp_alm,
    stable_pcp,
)

logger = logging.getLogger(__name__)

LOST_RANK = "row sketch lost rank; increase m2"

# residuals below this multiple of the ALM tolerance (relative to the column
# norm) are treated as zero by the l1 optimality certificate
CERTIFICATE_FLOOR_FACTOR = 100.0


class PipelineConfig(BaseModel):
    """Solver settings shared by the batch pipelines"""

    model_config = ConfigDict(frozen=True)

    solver: SolverConfig = Field(default_factory=SolverConfig)
    l1: L1Config = Field(default_factory=L1Config)
    rank_tol: float = Field(1e-6, gt=0.0)
    noise_sigma: float = Field(0.0, ge=0.0)
    rank_cap: Optional[int] = Field(None, ge=1)


class InformativePipelineConfig(PipelineConfig):
    """Settings for decompose_informative. The row sketch L_w is truncated to rank r_hat."""

    r_hat: int = Field(..., ge=1)
    C_r: int = Field(3, ge=1)
    C: int = Field(3, ge=1)
    use_alg3: bool = False
    tau_rel: float = Field(1e-6, gt=0.0)
    refine_row_space: bool = False
    alg3_T: int = Field(2, ge=2)
    alg3_max_cycles: int = Field(10, ge=1)
    alg3_augment: int = Field(0, ge=0)


class OnlineConfig(BaseModel):
    """Settings for the streaming tracker. n_u=None never refits the basis."""

    model_config = ConfigDict(frozen=True)

    r_hat: int = Field(..., ge=1)
    n_u: Optional[int] = Field(4, ge=1)
    n_s: int = Field(5, ge=1)
    C_r: int = Field(5, ge=1)
    C_rows: int = Field(20, ge=1)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    l1: L1Config = Field(default_factory=L1Config)
    rank_tol: float = Field(1e-6, gt=0.0)
    tau_rel: float = Field(1e-6, gt=0.0)
    noise_sigma: float = Field(0.0, ge=0.0)

    @property
    def window(self) -> int:
        return self.n_s * self.r_hat

    @property
    def init_columns(self) -> int:
        return self.C_r * self.r_hat


@dataclass
class PipelineResult:
    """Low-rank estimate basis @ representation and the matching sparse part"""

    basis: SubspaceBasis
    representation: np.ndarray
    low_rank: np.ndarray
    sparse: np.ndarray
    col_idx: IndexSet
    row_idx: IndexSet
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def warnings(self) -> list[str]:
        return self.diagnostics.setdefault("warnings", [])


def _assemble(
    D: np.ndarray,
    basis: SubspaceBasis,
    Q: np.ndarray,
    col_idx: IndexSet,
    row_idx: IndexSet,
    diagnostics: dict,
) -> PipelineResult:
    L_hat = basis.matrix @ Q
    return PipelineResult(
        basis=basis,
        representation=Q,
        low_rank=L_hat,
        sparse=D - L_hat,
        col_idx=col_idx,
        row_idx=row_idx,
        diagnostics=diagnostics,
    )


def _certificate_settings(l1: L1Config, solver: SolverConfig) -> L1Config:
    floor = max(l1.residual_floor, CERTIFICATE_FLOOR_FACTOR * solver.tol)
    return l1.model_copy(update={"residual_floor": min(floor, 0.5)})


def _pcp(M: np.ndarray, solver: SolverConfig, noise_sigma: float) -> Decomposition:
    if noise_sigma > 0:
        return stable_pcp(M, solver, noise_budget(M.shape, noise_sigma))
    return pcp_alm(M, solver)


def _l1(
    A: np.ndarray,
    B: np.ndarray,
    l1: L1Config,
    noise_sigma: float,
    diagnostics: dict,
    label: str,
) -> np.ndarray:
    """l1 fit of B against A, through l1_fit_noisy when the data is noisy."""
    if noise_sigma > 0:
        delta = noise_budget(np.shape(B), noise_sigma)
        diagnostics[f"{label}_noise_budget"] = delta
        return l1_fit_noisy(A, B, delta, l1)[0]
    fit = l1_fit_detailed(A, B, l1)
    diagnostics[f"{label}_lp_fallbacks"] = fit.lp_fallbacks
    diagnostics[f"{label}_certified"] = int(np.count_nonzero(fit.certified))
    return fit.solution


def _decompose_sketch(M: np.ndarray, cfg: PipelineConfig, diagnostics: dict, label: str):
    dec = _pcp(M, cfg.solver, cfg.noise_sigma)
    diagnostics[f"{label}_iterations"] = dec.iterations
    diagnostics[f"{label}_residual"] = dec.primal_residual
    if cfg.noise_sigma > 0:
        diagnostics[f"{label}_noise_budget"] = noise_budget(M.shape, cfg.noise_sigma)
    if not dec.converged:
        msg = f"{label} decomposition did not converge ({dec.constraint_residual:.2e})"
        logger.warning(msg)
        diagnostics["warnings"].append(msg)
    if not np.any(dec.low_rank):
        raise PreconditionError(f"{label} has no low-rank component")
    return dec


def _sketch_basis(low_rank: np.ndarray, rank_cap: Optional[int], rank_tol: float) -> SubspaceBasis:
    if rank_cap is not None:
        low_rank = truncate_rank(low_rank, rank_cap, rank_tol)
    return orthonormal_range(low_rank, rank_tol)


def _fit_representation(
    basis: SubspaceBasis, D: np.ndarray, rows: IndexSet, cfg: PipelineConfig, diagnostics: dict
) -> np.ndarray:
    U_s2 = basis.rows(rows)
    if len(rows) < basis.dim or numerical_rank(U_s2, cfg.rank_tol) < basis.dim:
        raise PreconditionError(LOST_RANK)
    l1 = _certificate_settings(cfg.l1, cfg.solver)
    return _l1(U_s2, select_rows(D, rows), l1, cfg.noise_sigma, diagnostics, "representation")


# -----------------------------------------------------------------------------
# Batch pipelines
# -----------------------------------------------------------------------------


def decompose_full(D: np.ndarray, cfg: PipelineConfig | None = None) -> PipelineResult:
    """Full-scale decomposition expressed as a PipelineResult."""
    D = as_matrix(D, "D")
    cfg = cfg or PipelineConfig()
    diagnostics: dict[str, Any] = {"warnings": [], "mode": "full"}
    start = time.perf_counter()
    dec = _decompose_sketch(D, cfg, diagnostics, "full")
    basis = _sketch_basis(dec.low_rank, cfg.rank_cap, cfg.rank_tol)
    Q = basis.T @ dec.low_rank
    diagnostics["seconds"] = time.perf_counter() - start
    n1, n2 = D.shape
    return _assemble(D, basis, Q, IndexSet.full(n2), IndexSet.full(n1), diagnostics)


def decompose_uniform(
    D: np.ndarray,
    m1: int,
    m2: int,
    cfg: PipelineConfig | None = None,
    rng: np.random.Generator | None = None,
) -> PipelineResult:
    """
    Uniform-sampling decomposition.

    1. decompose m1 uniformly sampled columns, take the column space of
       their low-rank part as the basis
    2. learn the representation by l1 regression on m2 uniformly sampled rows
    """
    D = as_matrix(D, "D")
    cfg = cfg or PipelineConfig()
    rng = rng if rng is not None else np.random.default_rng()
    n1, n2 = D.shape
    if not 1 <= m1 <= n2:
        raise PreconditionError(f"m1={m1} must lie in [1, {n2}]")
    if not 1 <= m2 <= n1:
        raise PreconditionError(f"m2={m2} must lie in [1, {n1}]")

    diagnostics: dict[str, Any] = {"warnings": [], "mode": "uniform", "m1": m1, "m2": m2}
    start = time.perf_counter()

    cols = uniform_indices(n2, m1, rng)
    dec = _decompose_sketch(select_columns(D, cols), cfg, diagnostics, "column_sketch")
    basis = _sketch_basis(dec.low_rank, cfg.rank_cap, cfg.rank_tol)
    diagnostics["rank"] = basis.dim

    rows = uniform_indices(n1, m2, rng)
    Q = _fit_representation(basis, D, rows, cfg, diagnostics)

    diagnostics["seconds"] = time.perf_counter() - start
    return _assemble(D, basis, Q, cols, rows, diagnostics)


def decompose_informative(
    D: np.ndarray, cfg: InformativePipelineConfig, rng: np.random.Generator | None = None
) -> PipelineResult:
    """
    Informative-sampling decomposition for structured data.

    A row sketch D_w (uniform rows, or the alternating sampler) is
    decomposed and its low-rank part truncated to rank r_hat; informative
    columns of it select the column sketch; the basis rows are fit by l1
    regression against the row space of the selected columns; informative
    rows of the basis then drive the representation fit.
    """
    D = as_matrix(D, "D")
    rng = rng if rng is not None else np.random.default_rng()
    n1, n2 = D.shape
    m = cfg.C_r * cfg.r_hat
    if m > min(n1, n2):
        raise PreconditionError(f"C_r * r_hat = {m} exceeds matrix shape {D.shape}")

    diagnostics: dict[str, Any] = {"warnings": [], "mode": "informative"}
    start = time.perf_counter()

    if cfg.use_alg3:
        alt = alternating_sample(
            D,
            AlternatingConfig(
                C_r=cfg.C_r,
                r_hat=cfg.r_hat,
                T=cfg.alg3_T,
                max_cycles=cfg.alg3_max_cycles,
                pcp=cfg.solver,
                rank_tol=cfg.rank_tol,
                tau_rel=cfg.tau_rel,
                augment=cfg.alg3_augment,
                noise_sigma=cfg.noise_sigma,
            ),
            rng,
        )
        row_sketch, L_w = alt.row_idx, alt.low_rank
        diagnostics["alg3_rank_trace"] = alt.rank_trace
        diagnostics["warnings"].extend(alt.warnings)
    else:
        row_sketch = uniform_indices(n1, m, rng)
        L_w = _decompose_sketch(select_rows(D, row_sketch), cfg, diagnostics, "row_sketch").low_rank

    rank_w = numerical_rank(L_w, cfg.rank_tol)
    if rank_w > cfg.r_hat:
        L_w = truncate_rank(L_w, cfg.r_hat, cfg.rank_tol)
        rank_w = cfg.r_hat
    diagnostics["row_sketch_rank"] = rank_w
    if rank_w < cfg.r_hat:
        msg = f"row sketch rank {rank_w} below r_hat={cfg.r_hat}; possible under-sketch"
        logger.warning(msg)
        diagnostics["warnings"].append(msg)

    sampler = InformativeConfig(C=cfg.C, tau_rel=cfg.tau_rel)
    cols = informative_columns(L_w, sampler, rng)
    D_s1 = select_columns(D, cols)
    L_ws = select_columns(L_w, cols)
    if cfg.refine_row_space:
        D_ws = select_columns(select_rows(D, row_sketch), cols)
        L_ws = _decompose_sketch(D_ws, cfg, diagnostics, "refine").low_rank
        L_ws = truncate_rank(L_ws, cfg.r_hat, cfg.rank_tol)
    V_s1 = orthonormal_range(L_ws.T, cfg.rank_tol)
    diagnostics["m1"] = len(cols)

    # rows of the basis: min ||d_s1^i - V_s1 u^i||_1 for every row i
    l1 = _certificate_settings(cfg.l1, cfg.solver)
    U_raw = _l1(V_s1.matrix, D_s1.T, l1, cfg.noise_sigma, diagnostics, "basis")
    basis = orthonormal_range(U_raw.T, cfg.rank_tol)
    diagnostics["rank"] = basis.dim

    rows = informative_columns(basis.T, sampler, rng)
    diagnostics["m2"] = len(rows)
    Q = _fit_representation(basis, D, rows, cfg, diagnostics)

    diagnostics["seconds"] = time.perf_counter() - start
    return _assemble(D, basis, Q, cols, rows, diagnostics)


# -----------------------------------------------------------------------------
# Online tracking
# -----------------------------------------------------------------------------


@dataclass
class OnlineState:
    """
    Single-owner tracker state; t counts pushed columns.

    Each stored representation is expressed in the basis that was current
    when it was computed; rep_versions holds that basis version (the refit
    count at the time) for every column. transitions[v] maps version-v
    coordinates to version v + 1.
    """

    basis: SubspaceBasis
    row_idx: IndexSet
    cfg: OnlineConfig
    rng: np.random.Generator
    rep_columns: list[np.ndarray] = field(default_factory=list)
    rep_version_list: list[int] = field(default_factory=list)
    sparse_columns: list[np.ndarray] = field(default_factory=list)
    window: deque = field(default_factory=deque)
    transitions: list[np.ndarray] = field(default_factory=list)
    t: int = 0
    init_columns: int = 0
    refits: int = 0

    @property
    def basis_version(self) -> int:
        return self.refits

    @property
    def rep_history(self) -> np.ndarray:
        return np.column_stack(self.rep_columns)

    @property
    def rep_versions(self) -> np.ndarray:
        return np.asarray(self.rep_version_list, dtype=int)

    def rep_history_in_current_basis(self) -> np.ndarray:
        """Every stored representation carried through the later refits."""
        maps = [np.eye(self.basis.dim)]
        for change in reversed(self.transitions):
            maps.append(maps[-1] @ change)
        maps.reverse()
        return np.column_stack(
            [maps[v] @ q for q, v in zip(self.rep_columns, self.rep_version_list)]
        )

    @property
    def sparse_history(self) -> np.ndarray:
        return np.column_stack(self.sparse_columns)

    def record(self, d: np.ndarray, q: np.ndarray, s: np.ndarray) -> None:
        self.rep_columns.append(q)
        self.rep_version_list.append(self.basis_version)
        self.sparse_columns.append(s)
        self.window.append((d, q))


def _select_rows_for(basis: SubspaceBasis, cfg: OnlineConfig, rng) -> IndexSet:
    return informative_columns(basis.T, InformativeConfig(C=cfg.C_rows, tau_rel=cfg.tau_rel), rng)


def online_init(
    D0: np.ndarray, cfg: OnlineConfig, rng: np.random.Generator | None = None
) -> OnlineState:
    """Decompose the first C_r * r_hat columns and pick the sampled rows from the basis."""
    D0 = as_matrix(D0, "D0")
    rng = rng if rng is not None else np.random.default_rng()
    n1, n0 = D0.shape
    if cfg.r_hat >= n1:
        raise PreconditionError(f"r_hat={cfg.r_hat} must be smaller than N1={n1}")
    if n0 != cfg.init_columns:
        raise PreconditionError(f"D0 must have C_r * r_hat = {cfg.init_columns} columns, got {n0}")

    dec = _pcp(D0, cfg.solver, cfg.noise_sigma)
    if not dec.converged:
        raise ConvergenceError(
            f"initial decomposition did not converge (residual {dec.constraint_residual:.2e})"
        )
    L0 = truncate_rank(dec.low_rank, cfg.r_hat, cfg.rank_tol)
    basis = orthonormal_range(L0, cfg.rank_tol)
    Q0 = basis.T @ L0
    state = OnlineState(
        basis=basis,
        row_idx=_select_rows_for(basis, cfg, rng),
        cfg=cfg,
        rng=rng,
        window=deque(maxlen=cfg.window),
        init_columns=n0,
    )
    for k in range(n0):
        state.record(D0[:, k], Q0[:, k], D0[:, k] - basis.matrix @ Q0[:, k])
    logger.info(f"online_init: rank {basis.dim}, {len(state.row_idx)} sampled rows")
    return state


def _refit_basis(state: OnlineState) -> None:
    """Refit the basis rows against the windowed representations, then reselect rows."""
    cfg = state.cfg
    data = np.column_stack([d for d, _ in state.window])
    reps = np.column_stack([q for _, q in state.window])
    if numerical_rank(reps.T, cfg.rank_tol) < reps.shape[0]:
        logger.warning("online refit skipped: windowed representations are rank-deficient")
        return
    # min ||D_window - U Q_window||_1 row by row
    l1 = _certificate_settings(cfg.l1, cfg.solver)
    U_raw = _l1(reps.T, data.T, l1, cfg.noise_sigma, {}, "refit").T
    basis = orthonormal_range(U_raw, cfg.rank_tol)
    change = basis.T @ U_raw
    state.window = deque(((d, change @ q) for d, q in state.window), maxlen=cfg.window)
    state.transitions.append(change)
    state.basis = basis
    state.row_idx = _select_rows_for(basis, cfg, state.rng)
    state.refits += 1


def online_push(state: OnlineState, d_t: np.ndarray) -> tuple[np.ndarray, np.ndarray, OnlineState]:
    """Decompose one new column against the current basis; refit every n_u pushes."""
    d = np.asarray(d_t, dtype=np.float64).ravel()
    if d.size != state.basis.ambient_dim:
        raise PreconditionError(f"column has length {d.size}, expected {state.basis.ambient_dim}")
    if not np.all(np.isfinite(d)):
        raise PreconditionError("column contains NaN or Inf entries")

    cfg = state.cfg
    rows = state.row_idx.as_array()
    l1 = _certificate_settings(cfg.l1, cfg.solver)
    q = _l1(state.basis.matrix[rows], d[rows], l1, cfg.noise_sigma, {}, "push")
    l_t = state.basis.matrix @ q
    s_t = d - l_t

    state.record(d, q, s_t)
    state.t += 1
    if cfg.n_u is not None and state.t % cfg.n_u == 0:
        _refit_basis(state)
    return l_t, s_t, state
