#!/usr/bin/env python3
"""
Desk-scale reproduction suite.

Runs the phase grid, the sampling comparison, the alternating-sampler
trace, online tracking and the speedup measurement, writing one CSV per
experiment under settings.data_dir. With --record every result is also
stored in the run ledger.
"""

import argparse
import logging
import sys
import time
from datetime import datetime
from pathlib import Path

import pandas as pd

# Add parent to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.database import get_session, init_ledger
from app.datagen import StreamSpec
from app.experiments import (
    InstanceParams,
    provenance,
    run_alg3_trace,
    run_online_track,
    run_phase_transition,
    run_sampling_comparison,
    run_speedup,
)
from app.ledger import record_run
from app.matrix_io import write_table
from app.pipelines import OnlineConfig
from config import settings

logger = logging.getLogger(__name__)

SUITES = ("phase", "compare", "alg3", "online", "speedup")


def _phase(seed: int, trials: int, workers: int):
    params = InstanceParams(n1=400, n2=400, r=5, rho=0.02)
    grid = run_phase_transition(
        params, [10, 20, 30, 50], [10, 20, 30, 50], trials, seed=seed, max_workers=workers
    )
    return grid.to_frame(), params.model_dump()


def _compare(seed: int, trials: int, workers: int):
    params = InstanceParams(model="clustered", n1=500, n2=1050, r=20, clusters=20, rho=0.02)
    frame = run_sampling_comparison(params, [60, 200], trials, seed=seed, max_workers=workers)
    return frame, params.model_dump()


def _alg3(seed: int, trials: int, workers: int):
    params = InstanceParams(model="doubly_clustered", n1=500, n2=500, r=20, clusters=10, rho=0.0)
    frame = run_alg3_trace(params, 3, trials, seed=seed, max_workers=workers)
    return frame, params.model_dump()


def _online(seed: int, trials: int, workers: int):
    frames = []
    for label, alpha, n_u in (("static", 0.0, 4), ("rotating", 0.05, 4), ("stale", 0.05, None)):
        spec = StreamSpec(
            n1=400, r=5, alpha=alpha, period=10, length=400, rho=0.01, normalized=True
        )
        frame = run_online_track(spec, OnlineConfig(r_hat=5, n_u=n_u), seed=seed)
        frame.insert(0, "scenario", label)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True), {"n1": 400, "r": 5, "rho": 0.01}


def _speedup(seed: int, trials: int, workers: int):
    params = {"n": 2000, "r": 5, "rho": 0.02, "m": 50}
    return run_speedup(seed=seed, **params), params


RUNNERS = {
    "phase": _phase,
    "compare": _compare,
    "alg3": _alg3,
    "online": _online,
    "speedup": _speedup,
}


def run_benchmarks(
    suites: tuple[str, ...] = SUITES,
    seed: int = 0,
    trials: int = 10,
    workers: int = 1,
    record: bool = False,
) -> dict[str, Path]:
    settings.data_dir.mkdir(parents=True, exist_ok=True)
    if record:
        init_ledger()

    written = {}
    start_time = time.time()
    for i, name in enumerate(suites, start=1):
        started_at = datetime.now()
        logger.info(f"[{i}/{len(suites)}] Running {name}")
        frame, params = RUNNERS[name](seed, trials, workers)
        params = {**params, "trials": trials}
        path = write_table(
            settings.data_dir / f"{name}.csv", frame, provenance(name, params, seed)
        )
        written[name] = path

        if record:
            with get_session() as session:
                record_run(session, name, seed, params, frame, str(path), started_at)

        elapsed = time.time() - start_time
        remaining = elapsed / i * (len(suites) - i)
        logger.info(
            f"Progress: {i}/{len(suites)} ({i / len(suites) * 100:.0f}%) - "
            f"Elapsed: {elapsed / 60:.1f} min - ETA: {remaining / 60:.1f} min"
        )

    logger.info("=" * 60)
    logger.info(f"Benchmarks complete in {(time.time() - start_time) / 60:.1f} minutes")
    logger.info("=" * 60)
    return written


def main():
    parser = argparse.ArgumentParser(description="Desk-scale reproduction suite")
    parser.add_argument(
        "--suite", choices=SUITES, action="append", default=None,
        help="Suite to run (repeatable; default: all)"
    )
    parser.add_argument("--seed", type=int, default=settings.default_seed, help="Master seed")
    parser.add_argument("--trials", type=int, default=10, help="Trials per grid cell")
    parser.add_argument(
        "--threads", type=int, default=settings.max_workers, help="Worker threads"
    )
    parser.add_argument(
        "--record", action="store_true", default=settings.record_runs,
        help="Store results in the run ledger"
    )
    args = parser.parse_args()

    settings.logs_dir.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s [%(levelname)s] %(message)s",
        handlers=[
            logging.StreamHandler(),
            logging.FileHandler(settings.logs_dir / "run_benchmarks.log"),
        ],
    )

    written = run_benchmarks(
        tuple(args.suite or SUITES),
        seed=args.seed,
        trials=args.trials,
        workers=args.threads,
        record=args.record,
    )
    for name, path in written.items():
        print(f"{name}: {path}")


if __name__ == "__main__":
    main()
