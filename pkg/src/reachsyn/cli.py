"""Command-line interface.

Subcommands mirror the pipeline stages:

* ``run``        -- full pipeline (abstract + synthesize + export + simulate)
* ``abstract``   -- dataset, enabled actions, probability intervals, IMDP
* ``synthesize`` -- robust value iteration on a previously built IMDP
* ``simulate``   -- Monte Carlo validation and trajectory dumps
* ``export``     -- explicit-transitions export of the IMDP
* ``sweep``      -- rerun the enable check and downstream stages for several
                    scaling caps, reusing the cached scaling factors

All state lives in the run's output directory; later stages load what
earlier stages wrote there.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .kernels import BACKEND
from .pipeline import Pipeline


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--output", help="override the configured output directory")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--threads", type=int,
                        help="cap the kernel worker pool (numba backend only)")
    parser.add_argument("-q", "--quiet", action="store_true",
                        help="suppress progress logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reachsyn",
        description="Sample-based interval-MDP abstraction and reach-avoid "
                    "controller synthesis.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, descr in [
        ("run", "full pipeline: abstract, synthesize, export, simulate"),
        ("abstract", "build dataset, enabled actions, intervals and the IMDP"),
        ("synthesize", "robust value iteration on a previously built IMDP"),
        ("simulate", "Monte Carlo validation plus trajectory dumps"),
        ("export", "write the explicit-transitions model and labels files"),
        ("sweep", "rerun enable check and downstream stages for several "
                  "scaling caps"),
    ]:
        p = sub.add_parser(name, help=descr, description=descr)
        _add_common(p)
        if name == "simulate":
            p.add_argument("--runs", type=int, help="override the episode count")
        if name == "sweep":
            p.add_argument("--lambda", dest="lambdas", required=True,
                           help="comma-separated scaling caps, e.g. 1.0,1.5")
    return parser


def _configure(args) -> Pipeline:
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(message)s", stream=sys.stderr)
    cfg = load_config(args.config, output_override=args.output,
                      seed_override=args.seed)
    threads = args.threads if args.threads is not None else cfg.threads
    if threads and BACKEND == "numba":
        import numba
        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    log = logging.getLogger("reachsyn")
    log.info("kernel backend: %s", BACKEND)
    return Pipeline(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    pipe = _configure(args)
    log = logging.getLogger("reachsyn")

    if args.command == "run":
        manifest = pipe.run()
        info = manifest["imdp"]
        log.info("states=%d actions=%d transitions=%d initial value=%.6f",
                 info["states"], info["actions"], info["transitions"],
                 info.get("initial_value", float("nan")))
    elif args.command == "abstract":
        imdp, _, _ = pipe.abstract()
        log.info("states=%d actions=%d transitions=%d",
                 imdp.num_states, imdp.num_actions, imdp.num_transitions)
    elif args.command == "synthesize":
        imdp, _, scheduler = pipe.synthesize()
        log.info("initial value V(s_I)=%.6f after %d sweeps (residual %.2e)",
                 scheduler.values[imdp.initial], scheduler.iterations,
                 scheduler.residual)
    elif args.command == "simulate":
        result = pipe.simulate_stage(runs=getattr(args, "runs", None))
        log.info("empirical=%.4f wilson=[%.4f, %.4f] bound=%.4f -> %s",
                 result.empirical, result.wilson_lower, result.wilson_upper,
                 result.lower_bound, "PASS" if result.passed else "FAIL")
        return 0 if result.passed else 1
    elif args.command == "export":
        tra, lab = pipe.export()
        log.info("wrote %s and %s", tra, lab)
    elif args.command == "sweep":
        lambdas = [float(tok) for tok in args.lambdas.split(",") if tok]
        summary = pipe.sweep(lambdas)
        for lam, rec in summary.items():
            log.info("Lambda=%s enabled=%d transitions=%d V(s_I)=%.6f",
                     lam, rec["enabled_actions"], rec["transitions"],
                     rec["initial_value"])
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
