"""
Command-line entry point (``cmtf``).

    cmtf experiment exp1 --noise 0 0.2 --replicates 3 --out results/exp1
    cmtf fit --config config.json --out results/fit
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from typing import List, Optional, Sequence

from . import __version__
from .core import storage
from .core.exceptions import ConfigError, exit_code, friendly_message
from .experiments.runner import EXPERIMENTS, ExperimentOptions, run_experiment
from .solver.aoadmm import FitResult, multi_init_fit
from .solver.config import SolverConfig
from .solver.problem import ProblemSpec

logger = logging.getLogger("cmtf_fusion")

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
TRACE_COLUMNS = ["iteration", "objective", "relative_change", "max_feasibility"]


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    """Attach one stream handler to the package logger (idempotent)."""
    level = logging.DEBUG if verbose else (logging.WARNING if quiet else logging.INFO)
    logger.setLevel(level)
    if not any(getattr(h, "_cmtf_handler", False) for h in logger.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._cmtf_handler = True
        logger.addHandler(handler)


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return value


def _noise_level(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"noise levels must be non-negative, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmtf",
        description="Fit PARAFAC2-based coupled matrix and tensor factorizations with AO-ADMM.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="log per-iteration traces")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="log warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    exp = sub.add_parser("experiment", help="run a replicated simulation experiment")
    exp.add_argument("name", choices=sorted(EXPERIMENTS))
    exp.add_argument("--noise", type=_noise_level, nargs="+", metavar="F", help="noise level(s); default per experiment")
    exp.add_argument("--replicates", type=_positive_int, default=20, metavar="N")
    exp.add_argument("--inits", type=_positive_int, default=5, metavar="N", help="initializations per fit")
    exp.add_argument("--seed", type=_non_negative_int, default=0, metavar="N")
    exp.add_argument("--out", default=None, metavar="DIR", help="output directory (default results/<name>)")
    exp.add_argument("--max-iter", type=_positive_int, default=None, metavar="N", help="cap on outer iterations")
    exp.add_argument("--workers", type=_positive_int, default=1, metavar="N", help="replicates run concurrently")
    exp.add_argument("--dump-data", action="store_true", help="also write datasets, ground truth and fit configs")
    exp.add_argument("--coupling", action=argparse.BooleanOptionalAction, default=None)
    exp.add_argument("--ridge", action=argparse.BooleanOptionalAction, default=None, help="exp2 only")
    exp.add_argument("--smoothness", action=argparse.BooleanOptionalAction, default=None, help="exp3 only")
    exp.set_defaults(handler=cmd_experiment)

    fit = sub.add_parser("fit", help="fit datasets declared in a JSON config")
    fit.add_argument("--config", required=True, metavar="FILE")
    fit.add_argument("--out", required=True, metavar="DIR")
    fit.add_argument("--seed", type=_non_negative_int, default=None, metavar="N", help="overrides solver.seed")
    fit.add_argument("--inits", type=_positive_int, default=None, metavar="N", help="overrides solver.initializations")
    fit.add_argument("--workers", type=_positive_int, default=None, metavar="N", help="overrides solver.workers")
    fit.set_defaults(handler=cmd_fit)
    return parser


# ---------- experiment ----------

def cmd_experiment(args: argparse.Namespace) -> int:
    options = ExperimentOptions(
        noise=tuple(args.noise) if args.noise else None,
        replicates=args.replicates,
        inits=args.inits,
        seed=args.seed,
        max_iter=args.max_iter,
        workers=args.workers,
        dump_data=args.dump_data,
        coupling=args.coupling,
        ridge=args.ridge,
        smoothness=args.smoothness,
    )
    out_dir = args.out or os.path.join("results", args.name)
    report = run_experiment(args.name, options, out_dir)
    for (condition, noise), avg in report.means().items():
        logger.info(
            "%s %s noise=%g: %s",
            args.name, condition, noise,
            ", ".join(f"{m}={avg[m]:.4g}" for m in report.metric_names),
        )
    return 0


# ---------- fit ----------

def load_config(path: str) -> dict:
    """Read a JSON config; syntax errors are reported with line and column."""
    if not os.path.isfile(path):
        raise ConfigError(f"Config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def write_fit_outputs(out_dir: str, problem: ProblemSpec, result: FitResult) -> List[str]:
    """Factors under ``factors/``, ``diagnostics.json`` and ``trace.csv``; returns the factor paths."""
    factor_dir = os.path.join(out_dir, "factors")
    written: List[str] = []
    for dataset_id in problem.ids:
        written.extend(storage.save_factors(factor_dir, dataset_id, result.decompositions[dataset_id]))
    if result.delta is not None:
        path = os.path.join(factor_dir, "delta.csv")
        storage.write_csv_matrix(path, result.delta)
        written.append(path)

    diagnostics = result.to_dict()
    diagnostics["version"] = __version__
    with open(os.path.join(out_dir, "diagnostics.json"), "w", encoding="utf-8") as f:
        json.dump(diagnostics, f, indent=2)
        f.write("\n")

    with open(os.path.join(out_dir, "trace.csv"), "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for record in result.records:
            writer.writerow(
                [
                    record.iteration,
                    repr(float(record.objective)),
                    repr(float(record.relative_change)),
                    repr(float(record.max_feasibility)),
                ]
            )
    return written


def cmd_fit(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    problem = ProblemSpec.from_dict(config, args.config)
    solver = SolverConfig.from_dict(config.get("solver")).replace(
        seed=args.seed, initializations=args.inits, workers=args.workers
    )
    logger.info(
        "Fitting %d dataset(s) from %s with %d initialization(s)",
        len(problem.datasets), args.config, solver.initializations,
    )
    result = multi_init_fit(problem, solver)
    os.makedirs(args.out, exist_ok=True)
    written = write_fit_outputs(args.out, problem, result)
    logger.info(
        "Seed %d: %s after %d iterations, objective %.6g; wrote %d factor file(s) to %s",
        result.seed, result.termination_reason, result.iterations, result.final_objective, len(written), args.out,
    )
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # usage errors count as bad input; exit code 2 is reserved for solver aborts
        return 0 if exc.code in (0, None) else 1
    configure_logging(args.verbose, args.quiet)
    try:
        return args.handler(args)
    except KeyboardInterrupt:
        logger.error("Interrupted")
        return 130
    except Exception as exc:
        logger.error("%s", friendly_message(exc))
        logger.debug("Traceback", exc_info=exc)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
