"""Command-line entry point: fit, simulate and run the simulation studies"""

import argparse
import os
import sys
from typing import List, Optional

import numpy as np

from src.core.exceptions import (
    ConvergenceError,
    ImportanceSamplingError,
    NotPositiveDefiniteError,
    UnidentifiableError,
    ZicpError,
)
from src.core.inference import mcem_fit
from src.core.model import Kind, Theta, simulate_hierarchy, uniform_design, zero_fraction
from src.core.specfun import RngStream
from src.studies import io
from src.studies.bias import bias_study
from src.studies.calibration import calibration_run
from src.studies.coverage import coverage_frame, coverage_study
from src.studies.gof import gof_histogram
from src.studies.ppplot import ppplot_data
from src.studies.simulation import run_grid
import config as env
from src.utils.config import Config
from src.utils.logger import setup_logger

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_UNIDENTIFIABLE = 2
EXIT_NOT_CONVERGED = 3

logger = None


def _sibling(path: str, suffix: str) -> str:
    stem, _ = os.path.splitext(path)
    return f"{stem}{suffix}"


def cmd_fit(args) -> int:
    overrides = {"kind": args.kind} if args.kind else {}
    config = io.read_mcem_config(args.config, overrides)
    dataset = io.read_dataset(args.data, config.kind)
    result = mcem_fit(dataset, config)
    io.write_fit(result, args.out)
    logger.info(f"fit written to {args.out}: theta={result.theta_hat.to_dict()}")
    if not result.converged:
        logger.warning("stopping rule not met within max_iter")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_simulate(args) -> int:
    theta = Theta.parse(args.theta)
    design = uniform_design(args.strata, args.per_stratum, args.effort)
    dataset, latent = simulate_hierarchy(theta, design, args.kind, RngStream(args.seed))
    io.write_dataset(dataset, args.out)
    if args.latent:
        io.write_latent(latent, dataset, args.latent)
    logger.info(f"simulated {dataset.n_observations} rows, zero fraction {zero_fraction(dataset):.3f}")
    return EXIT_OK


def cmd_bias_study(args) -> int:
    grid = io.read_grid(args.grid)
    table = bias_study(grid, processes=args.processes)
    io.write_frame(table, args.out)
    logger.info(f"bias table written to {args.out}")
    return EXIT_OK


def cmd_coverage_study(args) -> int:
    grid = io.read_grid(args.grid)
    levels = tuple(args.levels) if args.levels else (grid.level,)
    outcomes = run_grid(grid, levels=levels, processes=args.processes)
    cells = []
    for level in levels:
        cells.extend(coverage_study(grid.model_copy(update={"level": level}), outcomes=outcomes))
    io.write_frame(coverage_frame(cells), args.out)
    logger.info(f"coverage table written to {args.out}")
    return EXIT_OK


def cmd_gof(args) -> int:
    report = io.read_fit(args.fit)
    dataset = io.read_dataset(args.data, report.kind)
    result = gof_histogram(dataset, report.theta, args.replicates, args.bins, RngStream(args.seed))
    io.write_frame(result.histogram, args.out)
    io.write_json(result.zero_envelope, _sibling(args.out, "_envelope.json"))
    return EXIT_OK


def cmd_ppplot(args) -> int:
    dataset = io.read_dataset(args.data, Kind.CONTINUOUS)
    result = ppplot_data(dataset)
    io.write_frame(result.estimates, args.out)
    io.write_frame(result.pairs, _sibling(args.out, "_pairs.csv"))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    theta = Theta.parse(args.theta)
    overrides = {"kind": args.kind} if args.kind else {}
    mcem = io.read_mcem_config(args.config, overrides)
    covariance = None
    if args.fit:
        report = io.read_fit(args.fit)
        if report.covariance is None:
            raise NotPositiveDefiniteError(f"{args.fit} carries no covariance matrix")
        covariance = np.array(report.covariance)
    summary = calibration_run(theta, args.strata, args.per_stratum, args.replicates, mcem, args.seed,
                              target=args.target, covariance=covariance, processes=args.processes)
    io.write_json(summary, args.out)
    logger.info(f"{args.target:.0%} of estimates fall in the {summary['asymptotic_level']:.3%} asymptotic ellipsoid")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn
    from api.app import app

    config = Config(args.app_config)
    uvicorn.run(app, host=config.get("api.host", env.ZICP_API_HOST), port=config.get("api.port", env.ZICP_API_PORT))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zicp", description="Random-effects compound Poisson models")
    parser.add_argument("--log-level", default=None, type=str.upper,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Override logging level")
    parser.add_argument("--app-config", default=None, help="Application config JSON (logging, api)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="Fit a dataset by MCEM")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="McemConfig JSON")
    p.add_argument("--kind", choices=["cont", "disc", "continuous", "discrete"], default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="Simulate a dataset from the random-effects model")
    p.add_argument("--theta", required=True, help="a,b,c,d")
    p.add_argument("--strata", type=int, required=True)
    p.add_argument("--per-stratum", type=int, required=True)
    p.add_argument("--effort", type=float, default=1.0)
    p.add_argument("--kind", choices=["cont", "disc", "continuous", "discrete"], default="cont")
    p.add_argument("--seed", type=int, default=20240101)
    p.add_argument("--out", required=True)
    p.add_argument("--latent", default=None, help="Also write the latent truth CSV")
    p.set_defaults(func=cmd_simulate)

    for name, func in (("bias-study", cmd_bias_study), ("coverage-study", cmd_coverage_study)):
        p = sub.add_parser(name)
        p.add_argument("--grid", required=True, help="StudyGrid JSON")
        p.add_argument("--out", required=True)
        p.add_argument("--processes", type=int, default=None)
        if name == "coverage-study":
            p.add_argument("--levels", type=float, nargs="*", default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("gof", help="Averaged simulated histograms at the estimate")
    p.add_argument("--data", required=True)
    p.add_argument("--fit", required=True)
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--seed", type=int, default=20240101)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gof)

    p = sub.add_parser("ppplot", help="Per-stratum estimates and gamma pp-plot pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ppplot)

    p = sub.add_parser("calibrate", help="Calibrate the asymptotic ellipsoid level by simulation")
    p.add_argument("--theta", required=True)
    p.add_argument("--strata", type=int, required=True)
    p.add_argument("--per-stratum", type=int, required=True)
    p.add_argument("--replicates", type=int, required=True)
    p.add_argument("--kind", choices=["cont", "disc", "continuous", "discrete"], default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--fit", default=None, help="Fit JSON whose covariance defines the ellipsoid")
    p.add_argument("--target", type=float, default=0.90)
    p.add_argument("--seed", type=int, default=20240101)
    p.add_argument("--processes", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("serve", help="Run the HTTP API")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command and map errors to exit codes"""
    global logger
    args = build_parser().parse_args(argv)

    config = Config(args.app_config)
    logger = setup_logger(
        "src",
        config.get("logging.file", "logs/zicp.log"),
        args.log_level or config.get("logging.level", "INFO")
    )

    try:
        return args.func(args)
    except UnidentifiableError as e:
        logger.error(f"unidentifiable: {e}")
        return EXIT_UNIDENTIFIABLE
    except (ConvergenceError, ImportanceSamplingError, NotPositiveDefiniteError) as e:
        logger.error(f"not converged: {e}")
        return EXIT_NOT_CONVERGED
    except ZicpError as e:
        logger.error(f"invalid input: {e}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
