"""
Seeded synthetic data.

Every generator takes an explicit numpy Generator. make_instance bundles a
low-rank matrix, a Bernoulli sparse matrix and optional Gaussian noise into
a ProblemInstance that keeps the ground truth.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator, Literal, NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.exceptions import PreconditionError
from app.schemas import InstanceMetadata

logger = logging.getLogger(__name__)

Model = Literal["gaussian", "clustered", "doubly_clustered"]

# (big-cluster columns, small-cluster columns) per r/n directions, and block scales
IMBALANCED = ((200, 5), (1.0, 1.0))
WEIGHTED = ((130, 10), (1.0, 13.0))


@dataclass
class ProblemInstance:
    """D = L + S (+ N) with the generating parameters"""

    low_rank: np.ndarray
    sparse: np.ndarray
    data: np.ndarray
    r_true: int
    rho: float
    seed: Optional[int]
    structure: str
    clusters: Optional[int] = None
    scales: tuple[float, ...] = ()
    noise: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def metadata(self) -> InstanceMetadata:
        return InstanceMetadata(
            model=self.structure,
            n1=self.shape[0],
            n2=self.shape[1],
            r_true=self.r_true,
            rho=self.rho,
            seed=self.seed if self.seed is not None else -1,
            clusters=self.clusters,
            alpha=self.extra.get("alpha"),
            period=self.extra.get("period"),
            noise_sigma=float(self.extra.get("noise_sigma", 0.0)),
            extra={
                k: v
                for k, v in self.extra.items()
                if k not in ("noise_sigma", "alpha", "period")
            },
        )


# -----------------------------------------------------------------------------
# Basic models
# -----------------------------------------------------------------------------


def gen_gaussian_lr(n1: int, n2: int, r: int, rng: np.random.Generator) -> np.ndarray:
    """U_r Q_r with i.i.d. standard normal factors."""
    if not 1 <= r <= min(n1, n2):
        raise PreconditionError(f"rank {r} must lie in [1, min({n1}, {n2})]")
    return rng.standard_normal((n1, r)) @ rng.standard_normal((r, n2))


def gen_bernoulli_sparse(
    n1: int, n2: int, rho: float, amplitude: float = 1.0, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Entries independently nonzero w.p. rho, valued amplitude times a random sign."""
    if not 0.0 <= rho <= 1.0:
        raise PreconditionError(f"rho must lie in [0, 1], got {rho}")
    rng = rng if rng is not None else np.random.default_rng()
    support = rng.random((n1, n2)) < rho
    signs = rng.choice(np.array([-1.0, 1.0]), size=(n1, n2))
    return np.where(support, amplitude * signs, 0.0)


def random_orthonormal(n: int, r: int, rng: np.random.Generator) -> np.ndarray:
    """Basis drawn from the random orthogonal model."""
    Q, R = np.linalg.qr(rng.standard_normal((n, r)))
    return Q * np.sign(np.diag(R))


# -----------------------------------------------------------------------------
# Clustered models
# -----------------------------------------------------------------------------


def imbalanced_sizes(
    r: int, n: int, ratio: tuple[int, int] = IMBALANCED[0], total: int | None = None
) -> list[int]:
    """
    Column counts per cluster: the first half of the clusters get
    ratio[0] * r/n columns, the rest ratio[1] * r/n.

    With total given, the sizes are rescaled to sum to total, keeping the
    imbalance and at least r/n columns per cluster.
    """
    if n < 1 or r % n:
        raise PreconditionError(f"cluster count {n} must divide rank {r}")
    per = r // n
    big = (n + 1) // 2
    raw = np.array([ratio[0] * per] * big + [ratio[1] * per] * (n - big), dtype=np.float64)
    if total is None:
        return [int(s) for s in raw]
    if total < n * per:
        raise PreconditionError(f"total {total} too small for {n} clusters of {per} directions")
    scaled = raw * total / raw.sum()
    sizes = np.maximum(np.floor(scaled).astype(int), per)
    # largest remainder, taking back from the biggest clusters when over
    order = np.argsort(-(scaled - np.floor(scaled)))
    k = 0
    while sizes.sum() < total:
        sizes[order[k % n]] += 1
        k += 1
    while sizes.sum() > total:
        sizes[int(np.argmax(sizes))] -= 1
    return [int(s) for s in sizes]


def gen_clustered(
    n1: int,
    r: int,
    n: int,
    sizes_per_cluster: Sequence[int],
    scales: Sequence[float],
    rng: np.random.Generator,
) -> np.ndarray:
    """[scale_1 U_1 Q_1, ..., scale_n U_n Q_n] with U_i: n1 x r/n Gaussian factors."""
    if n < 1 or r % n:
        raise PreconditionError(f"cluster count {n} must divide rank {r}")
    if len(sizes_per_cluster) != n or len(scales) != n:
        raise PreconditionError(f"sizes and scales need {n} entries each")
    per = r // n
    if per > n1:
        raise PreconditionError(f"{per} directions per cluster exceed {n1} rows")
    if min(sizes_per_cluster) < per:
        raise PreconditionError(f"every cluster needs at least r/n = {per} columns")
    blocks = [
        scale * (rng.standard_normal((n1, per)) @ rng.standard_normal((per, size)))
        for size, scale in zip(sizes_per_cluster, scales)
    ]
    return np.hstack(blocks)


def _top_right_vectors(G: np.ndarray, r: int) -> np.ndarray:
    _, _, Vt = np.linalg.svd(G, full_matrices=False)
    return Vt[:r].T


def gen_doubly_clustered(
    N: int,
    r: int,
    n: int,
    rng: np.random.Generator,
    ratio: tuple[int, int] = IMBALANCED[0],
) -> np.ndarray:
    """
    U_g V_g^T where U_g and V_g are the top-r right singular vectors of two
    independent clustered matrices with N columns each. Both the column and
    row spaces come out clustered and coherent.
    """
    sizes = imbalanced_sizes(r, n, ratio, total=N)
    ones = [1.0] * n
    U_g = _top_right_vectors(gen_clustered(N, r, n, sizes, ones, rng), r)
    V_g = _top_right_vectors(gen_clustered(N, r, n, sizes, ones, rng), r)
    return U_g @ V_g.T


# -----------------------------------------------------------------------------
# Instances
# -----------------------------------------------------------------------------


def make_instance(
    model: Model,
    n1: int,
    n2: int,
    r: int,
    rho: float,
    rng: np.random.Generator,
    seed: int | None = None,
    clusters: int = 1,
    weighted: bool = False,
    amplitude: float = 1.0,
    noise_sigma: float = 0.0,
) -> ProblemInstance:
    """Generate D = L + S (+ N) for one of the synthetic models."""
    scales: tuple[float, ...] = ()
    if model == "gaussian":
        L = gen_gaussian_lr(n1, n2, r, rng)
    elif model == "clustered":
        ratio, (big_scale, small_scale) = WEIGHTED if weighted else IMBALANCED
        sizes = imbalanced_sizes(r, clusters, ratio, total=n2)
        big = (clusters + 1) // 2
        scales = tuple([big_scale] * big + [small_scale] * (clusters - big))
        L = gen_clustered(n1, r, clusters, sizes, scales, rng)
    elif model == "doubly_clustered":
        if n1 != n2:
            raise PreconditionError("doubly clustered instances are square")
        L = gen_doubly_clustered(n1, r, clusters, rng)
    else:
        raise PreconditionError(f"unknown model {model!r}")

    S = gen_bernoulli_sparse(n1, n2, rho, amplitude, rng)
    noise = rng.normal(0.0, noise_sigma, size=(n1, n2)) if noise_sigma > 0 else None
    D = L + S if noise is None else L + S + noise
    return ProblemInstance(
        low_rank=L,
        sparse=S,
        data=D,
        r_true=r,
        rho=rho,
        seed=seed,
        structure=model,
        clusters=clusters if model != "gaussian" else None,
        scales=scales,
        noise=noise,
        extra={"noise_sigma": noise_sigma, "amplitude": amplitude, "weighted": weighted},
    )


# -----------------------------------------------------------------------------
# Rotating subspace stream
# -----------------------------------------------------------------------------


class StreamSpec(BaseModel):
    """
    Stream whose r-dimensional column space is perturbed every `period`
    columns: U <- top-r left singular vectors of (U + alpha E).

    With normalized=True the entries of E have variance 1/n1, so alpha is
    the per-step perturbation size independent of n1.
    """

    model_config = ConfigDict(frozen=True)

    n1: int = Field(..., ge=1)
    r: int = Field(..., ge=1)
    alpha: float = Field(0.0, ge=0.0)
    period: int = Field(10, ge=1)
    length: int = Field(..., ge=1)
    rho: float = Field(0.0, ge=0.0, le=1.0)
    amplitude: float = Field(1.0, gt=0.0)
    normalized: bool = False


class StreamColumn(NamedTuple):
    index: int
    data: np.ndarray
    low_rank: np.ndarray
    sparse: np.ndarray
    basis: np.ndarray


def gen_rotating_stream(spec: StreamSpec, rng: np.random.Generator) -> Iterator[StreamColumn]:
    """Lazily emit (d_k, U q_k, s_k) with U as of emission time."""
    if spec.r > spec.n1:
        raise PreconditionError(f"rank {spec.r} exceeds dimension {spec.n1}")
    U = random_orthonormal(spec.n1, spec.r, rng)
    e_scale = 1.0 / np.sqrt(spec.n1) if spec.normalized else 1.0
    for k in range(1, spec.length + 1):
        E = rng.standard_normal((spec.n1, spec.r)) * e_scale
        q = rng.standard_normal(spec.r)
        l_k = U @ q
        s_k = gen_bernoulli_sparse(spec.n1, 1, spec.rho, spec.amplitude, rng)[:, 0]
        yield StreamColumn(k - 1, l_k + s_k, l_k, s_k, U)
        if k % spec.period == 0 and spec.alpha > 0:
            U = np.linalg.svd(U + spec.alpha * E, full_matrices=False)[0][:, : spec.r]


def materialize_stream(spec: StreamSpec, rng: np.random.Generator) -> ProblemInstance:
    """Collect a whole stream into a ProblemInstance (columns in emission order)."""
    columns = list(gen_rotating_stream(spec, rng))
    return ProblemInstance(
        low_rank=np.column_stack([c.low_rank for c in columns]),
        sparse=np.column_stack([c.sparse for c in columns]),
        data=np.column_stack([c.data for c in columns]),
        r_true=spec.r,
        rho=spec.rho,
        seed=None,
        structure="stream",
        extra={"alpha": spec.alpha, "period": spec.period, "normalized": spec.normalized},
    )
