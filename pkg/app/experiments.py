"""
Reproduction harness.

Each run_* function is deterministic given its master seed: every trial
draws its instance and its sampling from generators seeded with
[seed, *cell_key]. Trials may run on a thread pool; results are always
returned in canonical (sorted-by-axes) order.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Any, Callable, Hashable, Iterable, Literal, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from app.datagen import StreamSpec, gen_rotating_stream, make_instance
from app.exceptions import PreconditionError, SketchDecompError
from app.frames import FrameSequence
from app.matrix import orthonormal_range, relative_error
from app.pipelines import (
    InformativePipelineConfig,
    OnlineConfig,
    PipelineConfig,
    decompose_informative,
    decompose_uniform,
    online_init,
    online_push,
)
from app.sampling import AlternatingConfig, alternating_sample, uniform_indices
from app.solvers import l1_fit, pcp_alm
from config import settings

logger = logging.getLogger(__name__)

PHASE_CRITERION = 5e-3
COMPARISON_CRITERION = 1e-2
ROW_SKETCH_FACTOR = 8


def cell_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for one grid cell / trial, derived from the master seed."""
    return np.random.default_rng([seed, *key])


def provenance(command: str, params: dict, seed: int) -> list[str]:
    """Header lines recording how an output was produced."""
    args = " ".join(f"{k}={v}" for k, v in sorted(params.items()))
    return [f"sketchdecomp {command}", f"seed={seed}", f"args: {args}"]


def _run_tasks(
    tasks: dict[Hashable, Callable[[], Any]], max_workers: int, label: str
) -> dict[Hashable, Any]:
    """Run independent trial callables, logging progress; results keyed like tasks."""
    results: dict[Hashable, Any] = {}
    total = len(tasks)
    start = time.time()
    step = max(1, total // 10)

    def _progress(done: int) -> None:
        if done % step and done != total:
            return
        elapsed = time.time() - start
        rate = done / elapsed if elapsed > 0 else 0.0
        remaining = (total - done) / rate if rate > 0 else 0.0
        logger.info(
            f"{label}: {done}/{total} ({done / total * 100:.0f}%) - "
            f"Rate: {rate:.2f}/s - ETA: {remaining:.0f} s"
        )

    if max_workers <= 1:
        for done, (key, task) in enumerate(tasks.items(), start=1):
            results[key] = task()
            _progress(done)
        return results

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        future_to_key = {executor.submit(task): key for key, task in tasks.items()}
        for done, future in enumerate(as_completed(future_to_key), start=1):
            results[future_to_key[future]] = future.result()
            _progress(done)
    return results


# -----------------------------------------------------------------------------
# Phase transition
# -----------------------------------------------------------------------------


class InstanceParams(BaseModel):
    """Synthetic instance description used by the experiment grids"""

    model_config = ConfigDict(frozen=True)

    model: Literal["gaussian", "clustered", "doubly_clustered"] = "gaussian"
    n1: int = Field(400, ge=1)
    n2: int = Field(400, ge=1)
    r: int = Field(5, ge=1)
    rho: float = Field(0.02, ge=0.0, le=1.0)
    clusters: int = Field(1, ge=1)
    weighted: bool = False
    amplitude: float = Field(1.0, gt=0.0)

    def generate(self, rng: np.random.Generator, seed: Optional[int] = None):
        return make_instance(
            self.model,
            self.n1,
            self.n2,
            self.r,
            self.rho,
            rng,
            seed=seed,
            clusters=self.clusters,
            weighted=self.weighted,
            amplitude=self.amplitude,
        )


@dataclass
class GridResult:
    """Success rates over an (m1, m2) grid"""

    m1_values: list[int]
    m2_values: list[int]
    success_rate: np.ndarray
    trials: int
    criterion: float = PHASE_CRITERION
    mean_error: Optional[np.ndarray] = None

    def __post_init__(self):
        expected = (len(self.m1_values), len(self.m2_values))
        if self.success_rate.shape != expected:
            raise PreconditionError(f"grid shape {self.success_rate.shape} != {expected}")
        if np.any(self.success_rate < 0) or np.any(self.success_rate > 1):
            raise PreconditionError("success rates must lie in [0, 1]")

    def rate(self, m1: int, m2: int) -> float:
        return float(self.success_rate[self.m1_values.index(m1), self.m2_values.index(m2)])

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for i, m1 in enumerate(self.m1_values):
            for j, m2 in enumerate(self.m2_values):
                rows.append(
                    {
                        "m1": m1,
                        "m2": m2,
                        "trials": self.trials,
                        "success_rate": float(self.success_rate[i, j]),
                        "mean_error": (
                            float(self.mean_error[i, j]) if self.mean_error is not None else None
                        ),
                    }
                )
        return pd.DataFrame(rows)


def _uniform_trial(
    params: InstanceParams, m1: int, m2: int, seed: int, key: tuple, cfg: PipelineConfig
) -> float:
    inst = params.generate(cell_rng(seed, 0, key[-1]), seed)
    try:
        result = decompose_uniform(inst.data, m1, m2, cfg, cell_rng(seed, 1, *key))
    except SketchDecompError as e:
        logger.debug(f"trial {key} failed: {e}")
        return float("inf")
    return relative_error(inst.low_rank, result.low_rank)


def run_phase_transition(
    gen_params: InstanceParams,
    m1_list: Sequence[int],
    m2_list: Sequence[int],
    trials: int,
    criterion: float = PHASE_CRITERION,
    seed: int = 0,
    cfg: PipelineConfig | None = None,
    max_workers: int | None = None,
) -> GridResult:
    """
    Success rate of decompose_uniform over an (m1, m2) grid.

    Trial t uses the same instance in every cell, so cells differ only in
    the sketch sizes.
    """
    if trials < 1:
        raise PreconditionError("trials must be at least 1")
    cfg = cfg or PipelineConfig()
    m1_values, m2_values = sorted(m1_list), sorted(m2_list)
    tasks = {
        (i, j, t): (
            lambda i=i, j=j, t=t: _uniform_trial(
                gen_params, m1_values[i], m2_values[j], seed, (i, j, t), cfg
            )
        )
        for i in range(len(m1_values))
        for j in range(len(m2_values))
        for t in range(trials)
    }
    errors = _run_tasks(tasks, max_workers or settings.max_workers, "phase")

    shape = (len(m1_values), len(m2_values))
    success = np.zeros(shape)
    mean_error = np.zeros(shape)
    for i in range(shape[0]):
        for j in range(shape[1]):
            errs = np.array([errors[(i, j, t)] for t in range(trials)])
            success[i, j] = np.mean(errs <= criterion)
            finite = errs[np.isfinite(errs)]
            mean_error[i, j] = finite.mean() if finite.size else np.inf
    return GridResult(m1_values, m2_values, success, trials, criterion, mean_error)


# -----------------------------------------------------------------------------
# Sampling comparison
# -----------------------------------------------------------------------------


def _comparison_trial(
    params: InstanceParams,
    method: str,
    m: int,
    seed: int,
    key: tuple,
    cfg: PipelineConfig,
    row_sketch_factor: int,
) -> float:
    inst = params.generate(cell_rng(seed, 0, key[-1]), seed)
    rng = cell_rng(seed, 1, *key)
    try:
        if method == "informative":
            informative_cfg = InformativePipelineConfig(
                r_hat=params.r,
                C_r=row_sketch_factor,
                C=max(1, round(m / params.r)),
                solver=cfg.solver,
                l1=cfg.l1,
                rank_tol=cfg.rank_tol,
            )
            result = decompose_informative(inst.data, informative_cfg, rng)
        else:
            result = decompose_uniform(inst.data, m, m, cfg, rng)
    except SketchDecompError as e:
        logger.debug(f"{method} trial {key} failed: {e}")
        return float("inf")
    return relative_error(inst.low_rank, result.low_rank)


def run_sampling_comparison(
    clustered_params: InstanceParams,
    m_list: Sequence[int],
    trials: int,
    seed: int = 0,
    criterion: float = COMPARISON_CRITERION,
    cfg: PipelineConfig | None = None,
    max_workers: int | None = None,
    row_sketch_factor: int = ROW_SKETCH_FACTOR,
) -> pd.DataFrame:
    """
    Informative pipeline vs the uniform baseline at equal per-side budgets m.

    The informative pipeline decomposes a uniform row sketch of
    row_sketch_factor * r rows first; it has to be large enough for that
    PCP solve to succeed.
    """
    if trials < 1:
        raise PreconditionError("trials must be at least 1")
    cfg = cfg or PipelineConfig()
    methods = ("informative", "uniform-baseline")
    m_values = sorted(m_list)
    tasks = {
        (mi, k, t): (
            lambda mi=mi, k=k, t=t: _comparison_trial(
                clustered_params,
                methods[k],
                m_values[mi],
                seed,
                (mi, k, t),
                cfg,
                row_sketch_factor,
            )
        )
        for mi in range(len(m_values))
        for k in range(len(methods))
        for t in range(trials)
    }
    errors = _run_tasks(tasks, max_workers or settings.max_workers, "compare")

    rows = []
    for mi, m in enumerate(m_values):
        for k, method in enumerate(methods):
            errs = np.array([errors[(mi, k, t)] for t in range(trials)])
            finite = errs[np.isfinite(errs)]
            mean_err = float(errs.mean()) if finite.size == errs.size else float("inf")
            rows.append(
                {
                    "m": m,
                    "method": method,
                    "trials": trials,
                    "mean_error": mean_err,
                    "success_rate": float(np.mean(errs < criterion)),
                    "success": bool(mean_err < criterion),
                }
            )
    return pd.DataFrame(rows)


# -----------------------------------------------------------------------------
# Alternating sampler trace
# -----------------------------------------------------------------------------


def run_alg3_trace(
    doubly_params: InstanceParams,
    C: int,
    trials: int,
    seed: int = 0,
    max_cycles: int = 6,
    T: int = 2,
    max_workers: int | None = None,
) -> pd.DataFrame:
    """
    Rank of the row sketch per cycle of alternating_sample.

    With rho = 0 the sketches are used directly as their own low-rank parts.
    """
    if trials < 1:
        raise PreconditionError("trials must be at least 1")
    cfg = AlternatingConfig(
        C_r=C, r_hat=doubly_params.r, T=T, max_cycles=max_cycles, skip_pcp=doubly_params.rho == 0
    )

    def trial(t: int):
        inst = doubly_params.generate(cell_rng(seed, 0, t), seed)
        return alternating_sample(inst.data, cfg, cell_rng(seed, 1, t))

    results = _run_tasks(
        {t: (lambda t=t: trial(t)) for t in range(trials)},
        max_workers or settings.max_workers,
        "alg3",
    )
    rows = []
    for t in range(trials):
        res = results[t]
        for cycle, rank in enumerate(res.rank_trace, start=1):
            col_rank = res.col_rank_trace[cycle - 1] if cycle <= len(res.col_rank_trace) else None
            rows.append(
                {
                    "trial": t,
                    "cycle": cycle,
                    "rank": rank,
                    "column_rank": col_rank,
                    "reached": rank >= doubly_params.r,
                }
            )
    return pd.DataFrame(rows)


# -----------------------------------------------------------------------------
# Online tracking
# -----------------------------------------------------------------------------


def track_stream(
    columns: Iterable[np.ndarray],
    cfg: OnlineConfig,
    rng: np.random.Generator,
    truth: Optional[Sequence[np.ndarray]] = None,
) -> pd.DataFrame:
    """
    Run the online tracker over a column iterator.

    The first C_r * r_hat columns initialize the tracker. With truth given,
    each pushed column's error is ||l_t - truth_t|| divided by the average
    truth column norm.
    """
    iterator = iter(columns)
    head = [np.asarray(c, dtype=np.float64) for _, c in zip(range(cfg.init_columns), iterator)]
    if len(head) < cfg.init_columns:
        raise PreconditionError(
            f"stream has {len(head)} columns, initialization needs {cfg.init_columns}"
        )
    state = online_init(np.column_stack(head), cfg, rng)
    scale = None
    if truth is not None:
        scale = float(np.mean([np.linalg.norm(col) for col in truth]))

    rows = []
    for t, d in enumerate(iterator, start=cfg.init_columns):
        refits = state.refits
        l_t, s_t, state = online_push(state, d)
        row = {
            "t": t,
            "sparse_l1": float(np.abs(s_t).sum()),
            "refit": state.refits > refits,
        }
        if truth is not None:
            row["normalized_error"] = float(np.linalg.norm(l_t - truth[t]) / scale)
        rows.append(row)
    return pd.DataFrame(rows)


def run_online_track(
    spec: StreamSpec, cfg: OnlineConfig, seed: int = 0
) -> pd.DataFrame:
    """Online tracker on a rotating-subspace stream with known ground truth."""
    stream = list(gen_rotating_stream(spec, cell_rng(seed, 0)))
    truth = [c.low_rank for c in stream]
    return track_stream((c.data for c in stream), cfg, cell_rng(seed, 1), truth)


# -----------------------------------------------------------------------------
# Background subtraction
# -----------------------------------------------------------------------------


@dataclass
class BgsubResult:
    low_rank: np.ndarray
    sparse: np.ndarray
    height: int
    width: int
    pixels_used: int

    def low_rank_frames(self) -> FrameSequence:
        return FrameSequence(np.clip(self.low_rank, 0, 255), self.height, self.width)

    def sparse_frames(self) -> FrameSequence:
        return FrameSequence(np.clip(np.abs(self.sparse), 0, 255), self.height, self.width)

    def foreground_mask(self, threshold: float = 25.0) -> np.ndarray:
        return np.abs(self.sparse) > threshold


def run_bgsub(
    frames: FrameSequence,
    background_frames: Optional[FrameSequence],
    m2: int,
    seed: int = 0,
    r_hat: Optional[int] = None,
    cfg: PipelineConfig | None = None,
) -> BgsubResult:
    """
    Split frames into background and foreground.

    With background frames the basis is their span and each frame is a
    vector decomposition on m2 sampled pixels. Without them the frames go
    through decompose_informative.
    """
    cfg = cfg or PipelineConfig()
    rng = cell_rng(seed, 0)
    n_pixels = frames.height * frames.width

    if background_frames is not None:
        if background_frames.shape != frames.shape:
            raise PreconditionError(
                f"background frames are {background_frames.shape}, frames are {frames.shape}"
            )
        basis = orthonormal_range(background_frames.frames, cfg.rank_tol)
        rows = uniform_indices(n_pixels, min(m2, n_pixels), rng)
        idx = rows.as_array()
        Q = l1_fit(basis.matrix[idx], frames.frames[idx], cfg.l1)
        low = basis.matrix @ Q
        used = len(rows)
    else:
        n_frames = len(frames)
        r_hat = r_hat or max(1, min(3, n_frames // 3))
        result = decompose_informative(
            frames.frames,
            InformativePipelineConfig(
                r_hat=r_hat, C_r=3, C=3, solver=cfg.solver, l1=cfg.l1, rank_tol=cfg.rank_tol
            ),
            rng,
        )
        low = result.low_rank
        used = len(result.row_idx)

    logger.info(f"Background subtraction on {len(frames)} frames using {used} pixels")
    return BgsubResult(low, frames.frames - low, frames.height, frames.width, used)


# -----------------------------------------------------------------------------
# Speedup
# -----------------------------------------------------------------------------


def run_speedup(n: int, r: int, rho: float, m: int, seed: int = 0) -> pd.DataFrame:
    """Wall clock of decompose_uniform against full-scale pcp_alm on one instance."""
    inst = make_instance("gaussian", n, n, r, rho, cell_rng(seed, 0), seed=seed)

    start = time.perf_counter()
    sketch = decompose_uniform(inst.data, m, m, PipelineConfig(), cell_rng(seed, 1))
    sketch_seconds = time.perf_counter() - start

    start = time.perf_counter()
    full = pcp_alm(inst.data)
    full_seconds = time.perf_counter() - start

    sketch_error = relative_error(inst.low_rank, sketch.low_rank)
    full_error = relative_error(inst.low_rank, full.low_rank)
    logger.info(
        f"speedup n={n}: sketch {sketch_seconds:.2f}s, full {full_seconds:.2f}s, "
        f"ratio {full_seconds / sketch_seconds:.1f}x"
    )
    return pd.DataFrame(
        [
            {
                "n": n,
                "r": r,
                "rho": rho,
                "m": m,
                "sketch_seconds": sketch_seconds,
                "full_seconds": full_seconds,
                "speedup": full_seconds / sketch_seconds,
                "sketch_error": sketch_error,
                "full_error": full_error,
                "full_converged": full.converged,
            }
        ]
    )
