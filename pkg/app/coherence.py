"""
Incoherence diagnostics and sufficient sample-size calculators.

The bound functions evaluate the recovery conditions for uniformly sampled
sketches literally, with every unknown numerical constant supplied through
BoundConstants. They are transparent formula evaluators, not tuned
estimates: with the default constants of 1.0 they are useful for relative
comparisons (growth in r, in coherence, in 1/delta) rather than as absolute
sketch sizes.
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.exceptions import PreconditionError
from app.matrix import DEFAULT_RANK_TOL, svd_compact

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CoherenceReport:
    """Coherence of the column space (u) and row space (v) of a matrix"""

    gamma_u: float
    gamma_v: float
    mu: float
    uv_inf: float
    rank: int
    n1: int
    n2: int

    def as_dict(self) -> dict:
        return asdict(self)


class BoundConstants(BaseModel):
    """Numerical constants of the recovery conditions (unknown; default 1.0)"""

    model_config = ConfigDict(frozen=True)

    c2: float = Field(1.0, gt=0)
    c3: float = Field(1.0, gt=0)
    c2p: float = Field(1.0, gt=0)
    c3p: float = Field(1.0, gt=0)
    c5: float = Field(1.0, gt=0)
    c6: float = Field(1.0, gt=0)
    c7: float = Field(1.0, gt=0)
    c9: float = Field(1.0, gt=0)
    rho_r: float = Field(1.0, gt=0)
    rho_s: float = Field(0.1, gt=0)
    beta: float = Field(2.0, gt=1.0)
    delta: float = Field(0.1, gt=0.0, lt=1.0)


def coherence_of(L: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> CoherenceReport:
    """gamma = sqrt(N) max |basis entry|; mu = smallest value meeting all three bounds."""
    U, _, V = svd_compact(L, rank_tol)
    n1, n2 = U.ambient_dim, V.ambient_dim
    r = U.dim
    Um, Vm = U.matrix, V.matrix
    gamma_u = math.sqrt(n1) * float(np.abs(Um).max())
    gamma_v = math.sqrt(n2) * float(np.abs(Vm).max())
    row_u = float(np.max(np.sum(Um * Um, axis=1)))
    row_v = float(np.max(np.sum(Vm * Vm, axis=1)))
    uv_inf = float(np.abs(Um @ Vm.T).max())
    mu = max(n1 / r * row_u, n2 / r * row_v, n1 * n2 / r * uv_inf**2)
    return CoherenceReport(
        gamma_u=gamma_u, gamma_v=gamma_v, mu=mu, uv_inf=uv_inf, rank=r, n1=n1, n2=n2
    )


def _check_rank(r: int, *dims: int) -> None:
    if r < 1:
        raise PreconditionError(f"rank must be at least 1, got {r}")
    for d in dims:
        if d < r:
            raise PreconditionError(f"dimension {d} smaller than rank {r}")


# -----------------------------------------------------------------------------
# Individual terms
# -----------------------------------------------------------------------------


def column_span_bound(r: int, gamma_v: float, consts: BoundConstants | None = None) -> float:
    """Uniform columns needed to span the column space: r gamma_v^2 max(c2 log r, c3 log 3/delta)"""
    c = consts or BoundConstants()
    return r * gamma_v**2 * max(c.c2 * math.log(r), c.c3 * math.log(3.0 / c.delta))


def sketch_mu(r: int, gamma_v: float, n1: int, consts: BoundConstants | None = None) -> float:
    c = consts or BoundConstants()
    log_n1 = math.log(n1)
    return max(c.c7 * max(r, log_n1) / r, 6.0 * gamma_v**2, (c.c9 * gamma_v * log_n1) ** 2)


def sketch_pcp_bound(
    r: int, gamma_v: float, n1: int, consts: BoundConstants | None = None
) -> float:
    """Columns needed for the column sketch decomposition to be exact."""
    c = consts or BoundConstants()
    return r / c.rho_r * sketch_mu(r, gamma_v, n1, c) * math.log(n1) ** 2


def vector_fit_bound(r: int, n1: int, consts: BoundConstants | None = None) -> float:
    """Sampled rows needed to recover one column's representation exactly."""
    c = consts or BoundConstants()
    kappa = math.log(n1) / r
    log_term = math.log(n1 / c.delta)
    return max(
        2 * r * c.beta * (c.beta - 2) * math.log(1.0 / c.delta) / (3 * (c.beta - 1) ** 2)
        * (c.c6 * kappa * log_term + 1),
        c.c5 * log_term**2,
        (3.0 / c.delta) ** (1.0 / 6.0),
    )


def vector_fit_max_rho(r: int, n1: int, consts: BoundConstants | None = None) -> float:
    c = consts or BoundConstants()
    kappa = math.log(n1) / r
    return 0.5 / (r * c.beta * (c.c6 * kappa * math.log(n1 / c.delta) + 1))


# -----------------------------------------------------------------------------
# Combined conditions
# -----------------------------------------------------------------------------


def sufficient_m1(r: int, gamma_v: float, n1: int, consts: BoundConstants | None = None) -> int:
    c = consts or BoundConstants()
    _check_rank(r, n1)
    value = max(column_span_bound(r, gamma_v, c), sketch_pcp_bound(r, gamma_v, n1, c))
    return math.ceil(value)


def sufficient_m2(r: int, n1: int, n2: int, consts: BoundConstants | None = None) -> int:
    c = consts or BoundConstants()
    _check_rank(r, n1, n2)
    kappa = math.log(n1) / r
    log_joint = math.log(n1 * n2 / c.delta)
    terms = (
        r * math.log(n1) * max(c.c2p * math.log(r), c.c3p * math.log(3.0 / c.delta)),
        2 * r * c.beta * (c.beta - 2) * math.log(n2 / c.delta) / (3 * (c.beta - 1) ** 2)
        * (c.c6 * kappa * log_joint + 1),
        c.c5 * log_joint**2,
        (3.0 / c.delta) ** (1.0 / 6.0),
    )
    return math.ceil(max(terms))


def max_rho(r: int, n1: int, n2: int, consts: BoundConstants | None = None) -> float:
    c = consts or BoundConstants()
    _check_rank(r, n1, n2)
    kappa = math.log(n1) / r
    return min(c.rho_s, 0.5 / (r * c.beta * (c.c6 * kappa * math.log(n1 * n2 / c.delta) + 1)))


def full_pcp_max_rank(n1: int, n2: int, mu: float, consts: BoundConstants | None = None) -> float:
    """
    Largest rank the full-scale program is guaranteed to recover:
    rho_r N_small / (mu log^2 N_large).
    """
    c = consts or BoundConstants()
    n_large, n_small = max(n1, n2), min(n1, n2)
    return c.rho_r * n_small / (mu * math.log(n_large) ** 2)
