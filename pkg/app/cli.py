"""
Command-line interface.

    sketchdecomp [--seed N] [--threads N] [--out PATH] [--config FILE]
                 [--record] [-v] <command> [flags]

Exit codes: 0 success, 2 precondition or validation error, 3 fatal
non-convergence.
"""

import argparse
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app import __version__
from app.coherence import (
    coherence_of,
    full_pcp_max_rank,
    max_rho,
    sufficient_m1,
    sufficient_m2,
)
from app.datagen import StreamSpec, make_instance, materialize_stream
from app.exceptions import ConvergenceError, PreconditionError
from app.experiments import (
    InstanceParams,
    cell_rng,
    provenance,
    run_alg3_trace,
    run_bgsub,
    run_online_track,
    run_phase_transition,
    run_sampling_comparison,
    run_speedup,
    track_stream,
)
from app.frames import FrameSequence, synthetic_scene
from app.matrix_io import (
    format_for_suffix,
    iter_columns,
    read_matrix,
    write_matrix,
    write_metadata,
    write_table,
)
from app.pipelines import (
    InformativePipelineConfig,
    OnlineConfig,
    PipelineConfig,
    decompose_full,
    decompose_informative,
    decompose_uniform,
)
from app.sampling import (
    AlternatingConfig,
    InformativeConfig,
    alternating_sample,
    informative_columns,
    uniform_indices,
)
from app.solvers import L1Config, SolverConfig
from config import settings

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PRECONDITION = 2
EXIT_CONVERGENCE = 3

MODEL_NAMES = {
    "gaussian": "gaussian",
    "clustered": "clustered",
    "doubly": "doubly_clustered",
    "stream": "stream",
}


# -----------------------------------------------------------------------------
# Helpers
# -----------------------------------------------------------------------------


def read_config_file(path: Path) -> dict[str, str]:
    """Parse a key=value file. '#' starts a comment, blank lines are ignored."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PreconditionError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip().lstrip("-").replace("-", "_")] = value.strip().strip('"')
    return values


def _convert(action: argparse.Action, value: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        return value.lower() in ("1", "true", "yes", "on")
    convert = action.type or str
    if action.nargs in ("+", "*"):
        return [convert(v) for v in value.replace(",", " ").split()]
    return convert(value)


def apply_config_defaults(parser: argparse.ArgumentParser, values: dict[str, str]) -> list[str]:
    """Install config values as parser defaults; returns the keys it did not know."""
    actions = {a.dest: a for a in parser._actions}
    defaults, unknown = {}, []
    for key, value in values.items():
        if key not in actions:
            unknown.append(key)
            continue
        try:
            defaults[key] = _convert(actions[key], value)
        except (TypeError, ValueError) as e:
            parser.error(f"config value {key}={value!r}: {e}")
    parser.set_defaults(**defaults)
    return unknown


def _n_u(text: str) -> Optional[int]:
    return None if text.lower() in ("inf", "never", "none") else int(text)


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(
        solver=SolverConfig(lam=getattr(args, "lam", None)),
        l1=L1Config(max_workers=args.threads),
        noise_sigma=getattr(args, "noise_sigma", 0.0),
        rank_cap=getattr(args, "rank_cap", None),
    )


def _out_path(args, default: str) -> Path:
    path = Path(args.out) if args.out else Path(default)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _params(args) -> dict:
    skip = {"func", "config", "record", "verbose", "command"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def _emit_table(args, frame: pd.DataFrame, default_name: str) -> Path:
    path = _out_path(args, default_name)
    write_table(path, frame, provenance(args.command, _params(args), args.seed))
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def _suffixed(path: Path, tag: str) -> Path:
    return path.with_name(f"{path.stem}_{tag}{path.suffix}")


# -----------------------------------------------------------------------------
# Commands
# -----------------------------------------------------------------------------


def cmd_gen(args):
    rng = np.random.default_rng(args.seed)
    model = MODEL_NAMES[args.model]
    if model == "stream":
        spec = StreamSpec(
            n1=args.n1,
            r=args.rank,
            alpha=args.alpha,
            period=args.period,
            length=args.length or args.n2,
            rho=args.rho,
            amplitude=args.amplitude,
            normalized=args.normalized,
        )
        instance = materialize_stream(spec, rng)
        instance.seed = args.seed
    else:
        instance = make_instance(
            model,
            args.n1,
            args.n2,
            args.rank,
            args.rho,
            rng,
            seed=args.seed,
            clusters=args.clusters,
            weighted=args.weighted,
            amplitude=args.amplitude,
            noise_sigma=args.noise,
        )

    path = _out_path(args, f"instance.{args.format or 'bin'}")
    fmt = args.format or format_for_suffix(path)
    write_matrix(path, instance.data, fmt)
    write_metadata(path, instance.metadata())
    if args.truth:
        write_matrix(_suffixed(path, "L"), instance.low_rank, fmt)
        write_matrix(_suffixed(path, "S"), instance.sparse, fmt)
    logger.info(f"Generated {model} instance {instance.shape} -> {path}")
    return None, path


def cmd_decompose(args):
    D = read_matrix(args.matrix)
    cfg = _pipeline_config(args)
    rng = np.random.default_rng(args.seed)
    if args.mode == "full":
        result = decompose_full(D, cfg)
    elif args.mode == "uniform":
        if args.m1 is None or args.m2 is None:
            raise PreconditionError("--mode uniform needs --m1 and --m2")
        result = decompose_uniform(D, args.m1, args.m2, cfg, rng)
    else:
        if args.rank_hint is None:
            raise PreconditionError("--mode informative needs --rank-hint")
        informative = InformativePipelineConfig(
            r_hat=args.rank_hint,
            C_r=args.C_r,
            C=args.C,
            use_alg3=args.alg3,
            solver=cfg.solver,
            l1=cfg.l1,
            noise_sigma=cfg.noise_sigma,
        )
        result = decompose_informative(D, informative, rng)

    source = Path(args.matrix)
    base = Path(args.out) if args.out else source
    base.parent.mkdir(parents=True, exist_ok=True)
    fmt = format_for_suffix(base)
    low_path = write_matrix(_suffixed(base, "L"), result.low_rank, fmt)
    write_matrix(_suffixed(base, "S"), result.sparse, fmt)
    for warning in result.warnings:
        logger.warning(warning)
    logger.info(
        f"Decomposed {D.shape} ({args.mode}): rank {result.basis.dim}, "
        f"{len(result.col_idx)} columns, {len(result.row_idx)} rows"
    )
    summary = pd.DataFrame(
        [
            {
                "mode": args.mode,
                "rank": result.basis.dim,
                "m1": len(result.col_idx),
                "m2": len(result.row_idx),
                "seconds": result.diagnostics.get("seconds"),
                "warnings": len(result.warnings),
            }
        ]
    )
    return summary, low_path


def cmd_sample(args):
    A = read_matrix(args.matrix)
    rng = np.random.default_rng(args.seed)
    if args.alg == "uniform":
        if args.m is None:
            raise PreconditionError("--alg uniform needs --m")
        idx = uniform_indices(A.shape[1], args.m, rng)
    elif args.alg == "informative":
        idx = informative_columns(
            A, InformativeConfig(C=args.C, tau=args.tau, max_samples=args.m), rng
        )
    else:
        if args.rank_hint is None:
            raise PreconditionError("--alg alternating needs --rank-hint")
        result = alternating_sample(
            A, AlternatingConfig(C_r=args.C, r_hat=args.rank_hint), rng
        )
        for warning in result.warnings:
            logger.warning(warning)
        logger.info(f"Alternating sampler rank trace: {result.rank_trace}")
        idx = result.col_idx
    frame = pd.DataFrame({"index": list(idx)})
    return frame, _emit_table(args, frame, "indices.csv")


def cmd_coherence(args):
    L = read_matrix(args.matrix)
    report = coherence_of(L, settings.rank_tol)
    rows = dict(report.as_dict())
    if report.rank >= 1:
        rows["sufficient_m1"] = sufficient_m1(report.rank, report.gamma_v, report.n1)
        rows["sufficient_m2"] = sufficient_m2(report.rank, report.n1, report.n2)
        rows["max_rho"] = max_rho(report.rank, report.n1, report.n2)
        rows["full_pcp_max_rank"] = full_pcp_max_rank(report.n1, report.n2, report.mu)
    frame = pd.DataFrame({"key": list(rows), "value": list(rows.values())})
    return frame, _emit_table(args, frame, "coherence.csv")


def cmd_phase(args):
    params = InstanceParams(n1=args.n, n2=args.n, r=args.rank, rho=args.rho)
    grid = run_phase_transition(
        params,
        args.m1,
        args.m2,
        args.trials,
        criterion=args.criterion,
        seed=args.seed,
        cfg=_pipeline_config(args),
        max_workers=args.threads,
    )
    frame = grid.to_frame()
    return frame, _emit_table(args, frame, "phase.csv")


def cmd_compare(args):
    params = InstanceParams(
        model="clustered",
        n1=args.n1,
        n2=args.n2,
        r=args.rank,
        rho=args.rho,
        clusters=args.clusters,
        weighted=args.weighted,
    )
    m_list = args.m or [3 * args.rank, 10 * args.rank]
    frame = run_sampling_comparison(
        params,
        m_list,
        args.trials,
        seed=args.seed,
        cfg=_pipeline_config(args),
        max_workers=args.threads,
        row_sketch_factor=args.C_r,
    )
    return frame, _emit_table(args, frame, "compare.csv")


def cmd_alg3(args):
    params = InstanceParams(
        model="doubly_clustered",
        n1=args.n,
        n2=args.n,
        r=args.rank,
        rho=args.rho,
        clusters=args.clusters,
    )
    frame = run_alg3_trace(
        params,
        args.C,
        args.trials,
        seed=args.seed,
        max_cycles=args.max_cycles,
        max_workers=args.threads,
    )
    return frame, _emit_table(args, frame, "alg3.csv")


def cmd_online(args):
    cfg = OnlineConfig(
        r_hat=args.rhat,
        n_u=args.nu,
        n_s=args.ns,
        C_r=args.cr,
        C_rows=args.crows,
        l1=L1Config(max_workers=args.threads),
        noise_sigma=args.noise_sigma,
    )
    if args.synthetic:
        spec = StreamSpec(
            n1=args.n1,
            r=args.rhat,
            alpha=args.alpha,
            period=args.period,
            length=args.length,
            rho=args.rho,
            normalized=args.normalized,
        )
        frame = run_online_track(spec, cfg, seed=args.seed)
    else:
        if args.stream is None:
            raise PreconditionError("online needs a stream file or --synthetic")
        truth = list(read_matrix(args.truth).T) if args.truth else None
        frame = track_stream(iter_columns(args.stream), cfg, cell_rng(args.seed, 1), truth)
    return frame, _emit_table(args, frame, "online.csv")


def cmd_bgsub(args):
    scene = None
    if args.synthetic:
        scene = synthetic_scene(args.height, args.width, args.frames, cell_rng(args.seed, 2))
        frames, backgrounds = scene.frames, scene.backgrounds
    else:
        if args.frames_dir is None:
            raise PreconditionError("bgsub needs a frames directory or --synthetic")
        frames = FrameSequence.load_dir(args.frames_dir)
        backgrounds = FrameSequence.load_dir(args.background) if args.background else None
    if args.no_background:
        backgrounds = None

    result = run_bgsub(
        frames, backgrounds, args.m2, seed=args.seed, r_hat=args.rank_hint,
        cfg=_pipeline_config(args),
    )
    out_dir = Path(args.out) if args.out else Path("bgsub")
    result.low_rank_frames().save_dir(out_dir / "low_rank")
    result.sparse_frames().save_dir(out_dir / "sparse")

    energy = np.sum(result.sparse**2, axis=0)
    rows = []
    for k in range(len(frames)):
        row = {"frame": k, "sparse_energy": float(energy[k])}
        if scene is not None:
            mask = scene.masks[:, k]
            foreground = np.sum((frames.frames[mask, k] - scene.clean[mask, k]) ** 2)
            row["object_energy_in_sparse"] = float(
                np.sum(result.sparse[mask, k] ** 2) / foreground
            )
            row["object_energy_in_low_rank"] = float(
                np.sum((result.low_rank[mask, k] - scene.clean[mask, k]) ** 2) / foreground
            )
        rows.append(row)
    frame = pd.DataFrame(rows)
    path = out_dir / "summary.csv"
    write_table(path, frame, provenance(args.command, _params(args), args.seed))
    if scene is not None:
        in_sparse, leaked = scene.object_energy_split(result.low_rank, result.sparse)
        logger.info(f"Object energy: {in_sparse:.1%} in sparse, {leaked:.1%} in low rank")
    logger.info(f"Wrote low-rank and sparse frames under {out_dir}")
    return frame, path


def cmd_speedup(args):
    frame = run_speedup(args.n, args.rank, args.rho, args.m or 10 * args.rank, seed=args.seed)
    return frame, _emit_table(args, frame, "speedup.csv")


def cmd_serve(args):
    import uvicorn

    from app.database import init_ledger

    init_ledger()
    uvicorn.run("app.api:app", host=settings.api_host, port=settings.api_port, reload=False)
    return None, None


# -----------------------------------------------------------------------------
# Parser
# -----------------------------------------------------------------------------


GLOBAL_FLAGS = ("seed", "threads", "out", "config", "record", "verbose")


def _add_global_flags(parser: argparse.ArgumentParser, suppress: bool = False) -> None:
    """Flags every command accepts, before or after its name."""

    def default(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument(
        "--seed", type=int, default=default(settings.default_seed), help="Master seed"
    )
    parser.add_argument(
        "--threads", type=int, default=default(settings.max_workers),
        help="Worker threads (default: 1)",
    )
    parser.add_argument("--out", default=default(None), help="Output file or directory")
    parser.add_argument(
        "--config", type=Path, default=default(None), help="key=value defaults file"
    )
    parser.add_argument(
        "--record", action="store_true", default=default(settings.record_runs),
        help="Store the run in the results ledger",
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", default=default(False), help="Debug logging"
    )


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="sketchdecomp", description="Randomized low-rank plus sparse decomposition"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_global_flags(parser)
    common = argparse.ArgumentParser(add_help=False)
    _add_global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)
    commands: dict[str, argparse.ArgumentParser] = {}

    def add_command(name: str, **kwargs) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], **kwargs)


    p = add_command("gen", help="Generate a synthetic instance")
    p.add_argument("--model", choices=sorted(MODEL_NAMES), default="gaussian")
    p.add_argument("--n1", type=int, default=400)
    p.add_argument("--n2", type=int, default=400)
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--rho", type=float, default=0.02)
    p.add_argument("--clusters", type=int, default=1)
    p.add_argument("--weighted", action="store_true", help="Weighted clustering ratios")
    p.add_argument("--alpha", type=float, default=0.0, help="Stream rotation size")
    p.add_argument("--period", type=int, default=10, help="Columns between rotations")
    p.add_argument("--length", type=int, default=None, help="Stream length (default: n2)")
    p.add_argument("--normalized", action="store_true", help="Stream rotation scaled by 1/sqrt(n1)")
    p.add_argument("--noise", type=float, default=0.0, help="Dense Gaussian noise sigma")
    p.add_argument("--amplitude", type=float, default=1.0, help="Sparse entry magnitude")
    p.add_argument("--format", choices=["bin", "csv"], default=None, help="Default: from suffix")
    p.add_argument("--truth", action="store_true", help="Also write the L and S matrices")
    p.set_defaults(func=cmd_gen)
    commands["gen"] = p

    p = add_command("decompose", help="Decompose a matrix file")
    p.add_argument("matrix", type=Path)
    p.add_argument("--mode", choices=["full", "uniform", "informative"], default="uniform")
    p.add_argument("--m1", type=int, default=None)
    p.add_argument("--m2", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--rank-hint", type=int, default=None)
    p.add_argument("--C-r", dest="C_r", type=int, default=3)
    p.add_argument("--C", type=int, default=3)
    p.add_argument("--alg3", action="store_true", help="Row sketch by the alternating sampler")
    p.add_argument(
        "--noise", dest="noise_sigma", type=float, default=0.0,
        help="Dense noise sigma; routes solves through the noise-aware variants",
    )
    p.add_argument("--rank-cap", type=int, default=None, help="Truncate sketch bases to this rank")
    p.set_defaults(func=cmd_decompose)
    commands["decompose"] = p

    p = add_command("sample", help="Select column indices of a matrix file")
    p.add_argument("matrix", type=Path)
    p.add_argument(
        "--alg", choices=["uniform", "informative", "alternating"], default="informative"
    )
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--C", type=int, default=1)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--rank-hint", type=int, default=None)
    p.set_defaults(func=cmd_sample)
    commands["sample"] = p

    p = add_command("coherence", help="Coherence report of a low-rank matrix")
    p.add_argument("matrix", type=Path)
    p.set_defaults(func=cmd_coherence)
    commands["coherence"] = p

    p = add_command("phase", help="Phase-transition grid for the uniform pipeline")
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--rho", type=float, default=0.02)
    p.add_argument("--m1", type=int, nargs="+", default=[10, 20, 30, 40, 50])
    p.add_argument("--m2", type=int, nargs="+", default=[10, 20, 30, 40, 50])
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--criterion", type=float, default=5e-3)
    p.set_defaults(func=cmd_phase)
    commands["phase"] = p

    p = add_command("compare", help="Informative vs uniform sampling on clustered data")
    p.add_argument("--n1", type=int, default=500)
    p.add_argument("--n2", type=int, default=1050)
    p.add_argument("--rank", type=int, default=20)
    p.add_argument("--clusters", type=int, default=20)
    p.add_argument("--rho", type=float, default=0.02)
    p.add_argument("--weighted", action="store_true")
    p.add_argument("--m", type=int, nargs="+", default=None)
    p.add_argument("--C-r", dest="C_r", type=int, default=8, help="Row sketch size factor")
    p.add_argument("--trials", type=int, default=10)
    p.set_defaults(func=cmd_compare)
    commands["compare"] = p

    p = add_command("alg3", help="Rank trace of the alternating sampler")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--rank", type=int, default=20)
    p.add_argument("--clusters", type=int, default=10)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--C", type=int, default=3)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--max-cycles", type=int, default=6)
    p.set_defaults(func=cmd_alg3)
    commands["alg3"] = p

    p = add_command("online", help="Track a column stream")
    p.add_argument("stream", type=Path, nargs="?", default=None)
    p.add_argument("--truth", type=Path, default=None, help="Low-rank truth for error columns")
    p.add_argument("--synthetic", action="store_true", help="Use a rotating synthetic stream")
    p.add_argument("--nu", type=_n_u, default=4, help="Refit every n_u columns ('inf': never)")
    p.add_argument("--ns", type=int, default=5)
    p.add_argument("--rhat", type=int, default=5)
    p.add_argument("--cr", type=int, default=5)
    p.add_argument("--crows", type=int, default=20)
    p.add_argument("--n1", type=int, default=400)
    p.add_argument("--rho", type=float, default=0.01)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--period", type=int, default=10)
    p.add_argument("--length", type=int, default=400)
    p.add_argument("--normalized", action="store_true")
    p.add_argument("--noise", dest="noise_sigma", type=float, default=0.0, help="Dense noise sigma")
    p.set_defaults(func=cmd_online)
    commands["online"] = p

    p = add_command("bgsub", help="Background subtraction on PGM frames")
    p.add_argument("frames_dir", type=Path, nargs="?", default=None)
    p.add_argument("--background", type=Path, default=None)
    p.add_argument("--no-background", action="store_true", help="Ignore background frames")
    p.add_argument("--m2", type=int, default=500)
    p.add_argument("--rank-hint", type=int, default=None)
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--height", type=int, default=60)
    p.add_argument("--width", type=int, default=80)
    p.add_argument("--frames", type=int, default=30)
    p.set_defaults(func=cmd_bgsub)
    commands["bgsub"] = p

    p = add_command("speedup", help="Sketch vs full-scale wall clock")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--rho", type=float, default=0.02)
    p.add_argument("--m", type=int, default=None, help="Sketch size (default: 10 * rank)")
    p.set_defaults(func=cmd_speedup)
    commands["speedup"] = p

    p = add_command("serve", help="Run the results API")
    p.set_defaults(func=cmd_serve)
    commands["serve"] = p

    return parser, commands


def parse_args(argv: Optional[list[str]] = None) -> argparse.Namespace:
    parser, commands = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    values = read_config_file(args.config)
    command_values = {k: v for k, v in values.items() if k not in GLOBAL_FLAGS}
    unknown = apply_config_defaults(commands[args.command], command_values)
    global_values = {k: v for k, v in values.items() if k in GLOBAL_FLAGS}
    unknown = apply_config_defaults(parser, {**global_values, **{k: values[k] for k in unknown}})
    if unknown:
        logger.warning(f"Ignoring unknown config keys: {', '.join(unknown)}")
    return parser.parse_args(argv)


def _record(args, frame: pd.DataFrame, path: Optional[Path], started_at: datetime) -> None:
    from app import database
    from app.ledger import record_run

    with database.open_ledger() as session:
        record_run(
            session,
            args.command,
            args.seed,
            _params(args),
            frame,
            output_path=str(path) if path else None,
            started_at=started_at,
        )


def main(argv: Optional[list[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except PreconditionError as e:
        logging.basicConfig(format="%(asctime)s [%(levelname)s] %(message)s")
        logger.error(str(e))
        return EXIT_PRECONDITION

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(message)s",
    )
    started_at = datetime.now()
    try:
        frame, path = args.func(args)
    except ConvergenceError as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_CONVERGENCE
    except (PreconditionError, ValidationError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_PRECONDITION

    if args.record and frame is not None:
        _record(args, frame, path, started_at)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
