"""Command line entry point: ``nsd-ensemble run <config> [--seed N] [--out-dir D] ...``.

Exit status: 0 on success, 2 on invalid configuration, 3 when a solve fails.
"""

import argparse
import logging
import os
import sys

import numpy as np

from .errors import ConfigError, NSDError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3

log = logging.getLogger("nsd_ensemble")


def _parser():
    p = argparse.ArgumentParser(prog="nsd-ensemble",
                                description="Ensemble SAV/GBDF solver for Navier-Stokes-Darcy flow.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the scenario described by a config file")
    r.add_argument("config", help="path to a key = value config file")
    r.add_argument("--seed", type=int, help="override scheme.seed")
    r.add_argument("--out-dir", help="override output.dir")
    r.add_argument("--threads", type=int, help="worker threads for the compiled kernels")
    r.add_argument("--mode", choices=("ensemble", "individual"), help="override scheme.mode")
    r.add_argument("-v", "--verbose", action="store_true")
    return p


def _set_threads(n):
    if n is None:
        return None
    if n < 1:
        raise ConfigError("must be >= 1", field="--threads")
    from . import kernels
    if kernels.HAVE_NUMBA:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return n


def run_command(args):
    # imports deferred so that --help works without touching the numerics
    from .config import parse_config
    from .output import write_artifacts
    from .scenarios import run_scenario

    rc = parse_config(args.config)
    over = {}
    if args.seed is not None:
        over["scheme.seed"] = args.seed
    if args.out_dir is not None:
        over["output.dir"] = args.out_dir
    if args.mode is not None:
        over["scheme.mode"] = args.mode
    if over:
        rc = rc.with_overrides(**over)
    threads = _set_threads(args.threads)
    log.info("scenario %s -> %s", rc.scenario, rc.out_dir)
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        result = run_scenario(rc)
    meta = result["metadata"]
    meta["threads"] = threads if threads is not None else "default"
    meta["config"] = os.path.abspath(args.config)
    for path in write_artifacts(result, rc.out_dir):
        log.info("wrote %s", path)
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return run_command(args)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NSDError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
