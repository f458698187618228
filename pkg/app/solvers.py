"""
Convex subproblem solvers.

- pcp_alm: principal component pursuit by inexact ALM
- stable_pcp: the same loop with a Frobenius-ball noise block
- l1_fit: column-wise least absolute deviation regression
- l1_fit_noisy: l1 regression with a Frobenius-bounded dense error term
- bp_residual_oracle: null-space basis pursuit used to cross-check l1_fit
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg as sla
from scipy.optimize import linprog, lsq_linear

from app.exceptions import PreconditionError
from app.matrix import SubspaceBasis, as_matrix, numerical_rank
from config import settings

logger = logging.getLogger(__name__)


def default_lambda(shape: tuple[int, ...]) -> float:
    """1/sqrt of the larger dimension."""
    return 1.0 / np.sqrt(max(shape))


class SolverConfig(BaseModel):
    """ALM settings for pcp_alm and stable_pcp"""

    model_config = ConfigDict(frozen=True)

    lam: Optional[float] = Field(default=None, gt=0.0)
    tol: float = Field(default_factory=lambda: settings.pcp_tol, gt=0.0)
    max_iter: int = Field(default_factory=lambda: settings.pcp_max_iter, ge=1)
    mu_init: Optional[float] = Field(default=None, gt=0.0)
    mu_growth: float = Field(default=1.5, gt=1.0)
    mu_max_factor: float = Field(default=1e7, gt=1.0)
    dual_tol: Optional[float] = Field(default=None, gt=0.0)

    def lambda_for(self, shape: tuple[int, ...]) -> float:
        return self.lam if self.lam is not None else default_lambda(shape)


class L1Config(BaseModel):
    """Settings for l1_fit and l1_fit_noisy"""

    model_config = ConfigDict(frozen=True)

    opt_tol: float = Field(default_factory=lambda: settings.l1_opt_tol, gt=0.0)
    rank_tol: float = Field(default_factory=lambda: settings.rank_tol, gt=0.0)
    zero_tol: float = Field(default=1e-9, gt=0.0)
    residual_floor: float = Field(default=0.0, ge=0.0, lt=1.0)
    irls_iter: int = Field(default=30, ge=0)
    smoothing_decay: float = Field(default=0.2, gt=0.0, lt=1.0)
    max_workers: int = Field(default_factory=lambda: settings.max_workers, ge=1)
    admm_rho: Optional[float] = Field(default=None, gt=0.0)
    admm_max_iter: int = Field(default=2000, ge=1)
    admm_tol: float = Field(default=1e-9, gt=0.0)


@dataclass
class Decomposition:
    """Result of a PCP solve. constraint_residual includes the noise block if any."""

    low_rank: np.ndarray
    sparse: np.ndarray
    iterations: int
    primal_residual: float
    converged: bool
    constraint_residual: float = 0.0
    noise: Optional[np.ndarray] = None

    def objective(self, lam: float) -> float:
        return pcp_objective(self.low_rank, self.sparse, lam)


def pcp_objective(L: np.ndarray, S: np.ndarray, lam: float) -> float:
    """||L||_* + lam * ||S||_1"""
    return float(np.linalg.norm(L, "nuc") + lam * np.abs(S).sum())


# -----------------------------------------------------------------------------
# Proximal maps
# -----------------------------------------------------------------------------


def soft_threshold(X: np.ndarray, tau: float) -> np.ndarray:
    """Elementwise shrinkage sign(x) * max(|x| - tau, 0)."""
    return np.sign(X) * np.maximum(np.abs(X) - tau, 0.0)


def sv_threshold(X: np.ndarray, tau: float) -> np.ndarray:
    """Singular value thresholding: prox of tau * nuclear norm."""
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    k = int(np.count_nonzero(s))
    if k == 0:
        return np.zeros_like(X)
    return (U[:, :k] * s[:k]) @ Vt[:k, :]


def project_fro_ball(X: np.ndarray, radius: float) -> np.ndarray:
    norm = np.linalg.norm(X)
    if norm <= radius:
        return X
    return X * (radius / norm)


def noise_budget(shape: tuple[int, ...], sigma: float) -> float:
    """
    Frobenius radius that holds iid N(0, sigma^2) noise of the given shape
    with high probability: sigma * sqrt(n + sqrt(8 n)), n the entry count.
    """
    if sigma < 0:
        raise PreconditionError(f"sigma must be nonnegative, got {sigma}")
    n = int(np.prod(shape)) if len(shape) else 1
    if sigma == 0 or n == 0:
        return 0.0
    return float(sigma * np.sqrt(n + np.sqrt(8.0 * n)))


# -----------------------------------------------------------------------------
# Principal component pursuit
# -----------------------------------------------------------------------------


def _alm_start(D: np.ndarray, lam: float, cfg: SolverConfig):
    norm_two = np.linalg.norm(D, 2)
    norm_inf = np.abs(D).max() / lam
    Y = D / max(norm_two, norm_inf)
    mu = cfg.mu_init if cfg.mu_init is not None else 1.25 / norm_two
    return Y, mu, mu * cfg.mu_max_factor


def _stop(err: float, step: float, dual: float, cfg: SolverConfig) -> bool:
    """Primal residual and the change in L within tol; dual_tol adds a scaled S test."""
    if err > cfg.tol or step > cfg.tol:
        return False
    return cfg.dual_tol is None or dual <= cfg.dual_tol


def pcp_alm(D: np.ndarray, cfg: SolverConfig | None = None) -> Decomposition:
    """
    Solve min ||L||_* + lam ||S||_1 s.t. L + S = D by inexact ALM.

    The loop stops once the primal residual and ||L - L_prev||_F / ||D||_F
    are both at most tol; the second test keeps exact splits such as a
    single spike from stopping at the first iterate. Converged means the
    final primal residual is at most tol, so running out of iterations
    with a small residual still counts. dual_tol additionally requires the
    mu-scaled change in S to be small before stopping. Non-convergence is
    reported through Decomposition.converged, never raised.
    """
    D = as_matrix(D, "D")
    cfg = cfg or SolverConfig()
    norm_fro = np.linalg.norm(D)
    if norm_fro == 0.0:
        raise PreconditionError("pcp_alm needs a nonzero matrix")

    lam = cfg.lambda_for(D.shape)
    Y, mu, mu_max = _alm_start(D, lam, cfg)
    L = np.zeros_like(D)
    S = np.zeros_like(D)
    iteration = 0

    for iteration in range(1, cfg.max_iter + 1):
        L_prev, S_prev = L, S
        L = sv_threshold(D - S + Y / mu, 1.0 / mu)
        S = soft_threshold(D - L + Y / mu, lam / mu)
        R = D - L - S
        err = np.linalg.norm(R) / norm_fro
        step = np.linalg.norm(L - L_prev) / norm_fro
        dual = mu * np.linalg.norm(S - S_prev) / norm_fro
        if iteration % 10 == 0:
            logger.debug(
                f"pcp_alm iter {iteration}: residual {err:.3e}, dual {dual:.3e}, mu {mu:.3e}"
            )
        if _stop(err, step, dual, cfg):
            break
        Y = Y + mu * R
        mu = min(mu * cfg.mu_growth, mu_max)

    residual = float(np.linalg.norm(D - L - S) / norm_fro)
    converged = residual <= cfg.tol
    if not converged:
        logger.warning(
            f"pcp_alm did not converge on {D.shape[0]}x{D.shape[1]} input "
            f"after {iteration} iterations (residual {residual:.3e})"
        )
    return Decomposition(
        low_rank=L,
        sparse=S,
        iterations=iteration,
        primal_residual=residual,
        converged=converged,
        constraint_residual=residual,
    )


def stable_pcp(D: np.ndarray, cfg: SolverConfig | None = None, eps_n: float = 0.0) -> Decomposition:
    """
    Solve min ||L||_* + lam ||S||_1 s.t. ||L + S - D||_F <= eps_n.

    The ALM loop carries a third block N = D - L - S restricted to the
    eps_n ball; eps_n = 0 is plain pcp_alm.
    """
    if eps_n < 0:
        raise PreconditionError(f"eps_n must be nonnegative, got {eps_n}")
    if eps_n == 0:
        return pcp_alm(D, cfg)

    D = as_matrix(D, "D")
    cfg = cfg or SolverConfig()
    norm_fro = np.linalg.norm(D)
    if norm_fro == 0.0:
        raise PreconditionError("stable_pcp needs a nonzero matrix")

    lam = cfg.lambda_for(D.shape)
    Y, mu, mu_max = _alm_start(D, lam, cfg)
    L = np.zeros_like(D)
    S = np.zeros_like(D)
    N = project_fro_ball(D, eps_n)
    iteration = 0

    for iteration in range(1, cfg.max_iter + 1):
        L_prev, S_prev = L, S
        L = sv_threshold(D - S - N + Y / mu, 1.0 / mu)
        S = soft_threshold(D - L - N + Y / mu, lam / mu)
        N = project_fro_ball(D - L - S + Y / mu, eps_n)
        R = D - L - S - N
        err = np.linalg.norm(R) / norm_fro
        step = np.linalg.norm(L - L_prev) / norm_fro
        dual = mu * np.linalg.norm(S - S_prev) / norm_fro
        if _stop(err, step, dual, cfg):
            break
        Y = Y + mu * R
        mu = min(mu * cfg.mu_growth, mu_max)

    N = project_fro_ball(D - L - S, eps_n)
    constraint = float(np.linalg.norm(D - L - S - N) / norm_fro)
    converged = constraint <= cfg.tol
    if not converged:
        logger.warning(
            f"stable_pcp did not converge after {iteration} iterations ({constraint:.3e})"
        )
    return Decomposition(
        low_rank=L,
        sparse=S,
        iterations=iteration,
        primal_residual=float(np.linalg.norm(D - L - S) / norm_fro),
        converged=converged,
        constraint_residual=constraint,
        noise=N,
    )


# -----------------------------------------------------------------------------
# l1 regression
# -----------------------------------------------------------------------------


@dataclass
class L1FitResult:
    solution: np.ndarray
    certified: np.ndarray
    lp_fallbacks: int = 0

    @property
    def all_certified(self) -> bool:
        return bool(np.all(self.certified))


def l1_objective(A: np.ndarray, B: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Per-column ||b_j - A x_j||_1."""
    R = np.asarray(B) - np.asarray(A) @ np.asarray(X)
    return np.abs(R).sum(axis=0)


def _zero_threshold(
    A: np.ndarray, B: np.ndarray, zero_tol: float, residual_floor: float = 0.0
) -> np.ndarray:
    """Per-column size below which a residual counts as zero."""
    norms = np.linalg.norm(B.reshape(B.shape[0], -1), axis=0)
    scale = np.maximum(np.maximum(norms, np.abs(A).max(initial=0.0)), 1.0)
    return zero_tol * scale + residual_floor * norms


def l1_optimality_gap(
    A: np.ndarray,
    b: np.ndarray,
    x: np.ndarray,
    zero_tol: float = 1e-9,
    residual_floor: float = 0.0,
) -> float:
    """
    Subgradient certificate for min ||b - A x||_1.

    Fixes s = sign(r) on nonzero residuals, searches s in [-1, 1] on the
    (numerically) zero residuals, and returns ||A^T s||_inf for the best s
    found. Zero means x is optimal. residual_floor is the relative error
    already present in A; residuals below residual_floor * ||b|| are
    treated as zero.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).ravel()
    x = np.asarray(x, dtype=np.float64).ravel()
    r = b - A @ x
    free = np.abs(r) <= _zero_threshold(A, b, zero_tol, residual_floor)[0]
    g = A[~free].T @ np.sign(r[~free])
    if not np.any(free):
        return float(np.abs(g).max(initial=0.0))
    Af = A[free].T
    s_free, *_ = np.linalg.lstsq(Af, -g, rcond=None)
    if np.abs(s_free).max(initial=0.0) > 1.0:
        s_free = lsq_linear(Af, -g, bounds=(-1.0, 1.0)).x
    return float(np.abs(Af @ s_free + g).max(initial=0.0))


def _certify(A: np.ndarray, b: np.ndarray, x: np.ndarray, cfg: L1Config) -> bool:
    gap = l1_optimality_gap(A, b, x, cfg.zero_tol, cfg.residual_floor)
    return gap <= cfg.opt_tol


def _check_design(A: np.ndarray, cfg: L1Config) -> None:
    m, n = A.shape
    if m < n or numerical_rank(A, cfg.rank_tol) < n:
        raise PreconditionError("design matrix rank-deficient")


def _irls(A: np.ndarray, B: np.ndarray, cfg: L1Config) -> np.ndarray:
    """Smoothed IRLS with continuation, all columns at once."""
    m, n = A.shape
    X = np.linalg.lstsq(A, B, rcond=None)[0]
    AA = (A[:, :, None] * A[:, None, :]).reshape(m, n * n)
    R = B - A @ X
    eps = 0.1 * max(np.abs(R).max(initial=0.0), 1e-300)
    eps_min = cfg.zero_tol * max(np.abs(B).max(initial=0.0), 1.0)
    for _ in range(cfg.irls_iter):
        if eps <= eps_min:
            break
        W = 1.0 / np.sqrt(R * R + eps * eps)
        G = (W.T @ AA).reshape(-1, n, n)
        rhs = (W * B).T @ A
        try:
            X = np.linalg.solve(G, rhs[..., None])[..., 0].T
        except np.linalg.LinAlgError:
            break
        R = B - A @ X
        eps *= cfg.smoothing_decay
    return X


def _polish_vertex(A: np.ndarray, B: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Interpolate each column through its n smallest residual rows.

    Returns the polished solutions and the interpolated row sets (n x k).
    """
    n = A.shape[1]
    R = np.abs(B - A @ X)
    Z = np.argpartition(R, n - 1, axis=0)[:n] if R.shape[0] > n else np.tile(
        np.arange(n)[:, None], (1, R.shape[1])
    )
    cols = np.arange(B.shape[1])
    Az = A[Z.T]
    bz = B[Z, cols[None, :]].T
    polished = X.copy()
    try:
        polished = np.linalg.solve(Az, bz[..., None])[..., 0].T
    except np.linalg.LinAlgError:
        for j in cols:
            try:
                polished[:, j] = np.linalg.solve(Az[j], bz[j])
            except np.linalg.LinAlgError:
                pass
    return polished, Z


def _vertex_certificates(
    A: np.ndarray, B: np.ndarray, X: np.ndarray, Z: np.ndarray, cfg: L1Config
) -> np.ndarray:
    """Batched square-system certificate at interpolated vertices."""
    m, n = A.shape
    k = B.shape[1]
    R = B - A @ X
    tiny = _zero_threshold(A, B, cfg.zero_tol, cfg.residual_floor)[None, :]
    signs = np.where(np.abs(R) <= tiny, 0.0, np.sign(R))
    cols = np.arange(k)
    signs[Z, cols[None, :]] = 0.0
    g = signs.T @ A
    try:
        s_z = np.linalg.solve(np.transpose(A[Z.T], (0, 2, 1)), -g[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return np.zeros(k, dtype=bool)
    return np.abs(s_z).max(axis=1) <= 1.0 + cfg.opt_tol


def _lp_column(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """min 1'u + 1'v s.t. A x + u - v = b, u, v >= 0 (dual simplex vertex)."""
    m, n = A.shape
    c = np.concatenate([np.zeros(n), np.ones(2 * m)])
    A_eq = np.hstack([A, np.eye(m), -np.eye(m)])
    bounds = [(None, None)] * n + [(0, None)] * (2 * m)
    res = linprog(c, A_eq=A_eq, b_eq=b, bounds=bounds, method="highs-ds")
    if res.status != 0:
        logger.warning(f"l1 LP fallback ended with status {res.status}: {res.message}")
        return np.linalg.lstsq(A, b, rcond=None)[0]
    x = res.x[:n]
    polished, _ = _polish_vertex(A, b[:, None], x[:, None])
    if np.abs(b - A @ polished[:, 0]).sum() <= np.abs(b - A @ x).sum():
        x = polished[:, 0]
    return x


def l1_fit_detailed(A: np.ndarray, B: np.ndarray, cfg: L1Config | None = None) -> L1FitResult:
    """l1_fit plus per-column certificate flags."""
    cfg = cfg or L1Config()
    A = as_matrix(A, "A")
    B = np.asarray(B, dtype=np.float64)
    vector = B.ndim == 1
    B = as_matrix(B.reshape(-1, 1) if vector else B, "B")
    if A.shape[0] != B.shape[0]:
        raise PreconditionError(f"row counts differ: A has {A.shape[0]}, B has {B.shape[0]}")
    _check_design(A, cfg)
    m, n = A.shape
    k = B.shape[1]

    if m == n:
        X = np.linalg.solve(A, B)
        certified = np.ones(k, dtype=bool)
        return L1FitResult(X[:, 0] if vector else X, certified)

    X = _irls(A, B, cfg)
    polished, Z = _polish_vertex(A, B, X)
    better = l1_objective(A, B, polished) <= l1_objective(A, B, X) * (1 + 1e-12)
    X = np.where(better[None, :], polished, X)
    certified = better & _vertex_certificates(A, B, X, Z, cfg)

    pending = np.flatnonzero(~certified)
    for j in pending:
        if _certify(A, B[:, j], X[:, j], cfg):
            certified[j] = True

    pending = np.flatnonzero(~certified)
    if pending.size:
        logger.debug(f"l1_fit: {pending.size}/{k} columns need the LP fallback")
        if cfg.max_workers > 1 and pending.size > 1:
            with ThreadPoolExecutor(max_workers=cfg.max_workers) as executor:
                solutions = list(executor.map(lambda j: _lp_column(A, B[:, j]), pending))
        else:
            solutions = [_lp_column(A, B[:, j]) for j in pending]
        for j, x in zip(pending, solutions):
            X[:, j] = x
            certified[j] = _certify(A, B[:, j], x, cfg)
        failed = int(np.count_nonzero(~certified))
        if failed:
            logger.warning(f"l1_fit: {failed}/{k} columns failed the optimality certificate")

    return L1FitResult(X[:, 0] if vector else X, certified, lp_fallbacks=int(pending.size))


def l1_fit(A: np.ndarray, B: np.ndarray, cfg: L1Config | None = None) -> np.ndarray:
    """
    Column-wise min sum_j ||b_j - A x_j||_1.

    A must have full column rank. A one-dimensional B gives a
    one-dimensional result.
    """
    return l1_fit_detailed(A, B, cfg).solution


def _ball_shrink(V: np.ndarray, rho: float, delta: float) -> np.ndarray:
    """
    E minimizing huber_rho(V - E) subject to ||E||_F <= delta.

    Entrywise e = sign(v) min(rho |v| / (rho + kappa), 1 / kappa) with the
    multiplier kappa found by bisection.
    """
    if np.linalg.norm(V) <= delta:
        return V.copy()
    absV = np.abs(V)

    def shrink(kappa: float) -> np.ndarray:
        return np.minimum(rho * absV / (rho + kappa), 1.0 / kappa)

    lo, hi = 0.0, np.sqrt(V.size) / delta
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(shrink(mid)) > delta:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi:
            break
    return np.sign(V) * shrink(hi)


def l1_fit_noisy(
    A: np.ndarray, B: np.ndarray, delta_n: float, cfg: L1Config | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """
    min ||B - A X - E||_1 subject to ||E||_F <= delta_n.

    Two-block ADMM on (X) and (Z, E) with Z = B - A X - E, followed by an
    exact l1_fit of B - E. delta_n = 0 is plain l1_fit with E = 0.
    """
    cfg = cfg or L1Config()
    if delta_n < 0:
        raise PreconditionError(f"delta_n must be nonnegative, got {delta_n}")
    A = as_matrix(A, "A")
    B_in = np.asarray(B, dtype=np.float64)
    vector = B_in.ndim == 1
    B = as_matrix(B_in.reshape(-1, 1) if vector else B_in, "B")
    if A.shape[0] != B.shape[0]:
        raise PreconditionError(f"row counts differ: A has {A.shape[0]}, B has {B.shape[0]}")
    _check_design(A, cfg)

    if delta_n == 0:
        X = l1_fit(A, B, cfg)
        E = np.zeros_like(B)
    else:
        pinv = np.linalg.pinv(A)
        X = pinv @ B
        E = np.zeros_like(B)
        Z = B - A @ X
        Lam = np.zeros_like(B)
        rho = cfg.admm_rho or 1.0 / max(np.abs(Z).mean(), 1e-12)
        scale = max(np.linalg.norm(B), 1.0)
        for it in range(1, cfg.admm_max_iter + 1):
            X = pinv @ (B - E - Z + Lam / rho)
            V = B - A @ X + Lam / rho
            E = _ball_shrink(V, rho, delta_n)
            Z_prev = Z
            Z = soft_threshold(V - E, 1.0 / rho)
            R = B - A @ X - E - Z
            Lam = Lam + rho * R
            primal = np.linalg.norm(R) / scale
            dual = rho * np.linalg.norm(Z - Z_prev) / scale
            if primal <= cfg.admm_tol and dual <= cfg.admm_tol:
                logger.debug(f"l1_fit_noisy ADMM converged in {it} iterations")
                break
        X = l1_fit(A, B - E, cfg)

    if vector:
        return X[:, 0], E[:, 0]
    return X, E


# -----------------------------------------------------------------------------
# Null-space oracle
# -----------------------------------------------------------------------------


def bp_residual_oracle(U_s2: SubspaceBasis | np.ndarray, d_s2: np.ndarray) -> np.ndarray:
    """
    min ||z||_1 s.t. W^T z = W^T d_s2, with W an orthonormal basis of the
    complement of range(U_s2).

    The minimizer equals d_s2 - U_s2 q* for q* = l1_fit(U_s2, d_s2).
    """
    U = U_s2.matrix if isinstance(U_s2, SubspaceBasis) else as_matrix(U_s2, "U_s2")
    d = np.asarray(d_s2, dtype=np.float64).ravel()
    if U.shape[0] != d.size:
        raise PreconditionError(f"length mismatch: U_s2 has {U.shape[0]} rows, d has {d.size}")
    if U.shape[1] >= U.shape[0]:
        raise PreconditionError("complement is empty")
    W = sla.null_space(U.T)
    if W.shape[1] == 0:
        raise PreconditionError("complement is empty")

    m = d.size
    Wt = W.T
    c = np.ones(2 * m)
    A_eq = np.hstack([Wt, -Wt])
    res = linprog(c, A_eq=A_eq, b_eq=Wt @ d, bounds=[(0, None)] * (2 * m), method="highs-ds")
    if res.status != 0:
        raise PreconditionError(f"basis pursuit LP failed: {res.message}")
    return res.x[:m] - res.x[m:]
