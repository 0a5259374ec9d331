"""Command-line interface: ``ctxbid {run,scaling,lower-bound,selftest}``."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from .errors import CtxBidError, InsufficientDataError
from .harness import (
    DEFAULT_HORIZONS,
    ExperimentConfig,
    fit_scaling,
    lower_bound_config,
    measurability_audit,
    run_experiment,
    write_outputs,
)

log = logging.getLogger("ctxbid")


def _add_common(p: argparse.ArgumentParser, config_required: bool) -> None:
    p.add_argument("--config", required=config_required, help="experiment config (JSON)")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="seed base")
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--workers", type=int, default=None, help="worker processes")
    p.add_argument("--quiet", action="store_true", help="only warnings and errors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctxbid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="execute an experiment config"), True)
    _add_common(sub.add_parser("scaling", help="horizon sweep with a log-log slope fit"), True)
    lb = sub.add_parser("lower-bound", help="plug-in policy on the lower-bound instance")
    _add_common(lb, False)
    lb.add_argument("--horizons", type=lambda s: [int(v) for v in s.split(",")], default=None,
                    help="comma-separated horizons")
    st = sub.add_parser("selftest", help="run the built-in invariant checks")
    st.add_argument("--quiet", action="store_true")
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.seed is not None:
        changes["seed_base"] = args.seed
    if args.replications is not None:
        changes["replications"] = args.replications
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.out is not None:
        changes["output_dir"] = args.out
    return cfg.replace(**changes) if changes else cfg


def _execute(cfg: ExperimentConfig, need_fit: bool) -> int:
    t0 = time.perf_counter()
    traces = run_experiment(cfg)
    try:
        fit = fit_scaling(traces)
    except InsufficientDataError as exc:
        if need_fit:
            raise
        log.info("no scaling fit: %s", exc)
        fit = None
    wall = time.perf_counter() - t0
    out = cfg.output_dir or "results"
    write_outputs(traces, fit, out, cfg, wall, cfg.trace_every)
    for T in cfg.horizons:
        totals = [tr.total for tr in traces if tr.T == T]
        print(f"T={T:>7d}  mean R(T) = {sum(totals) / len(totals):.6g}")
    if fit is not None:
        print(f"slope = {fit.slope:.4f}  intercept = {fit.intercept:.4f}  r2 = {fit.r_squared:.4f}")
    print(f"outputs written to {out} ({wall:.1f}s)")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "selftest":
            from .selftest import run_selftest

            return 0 if run_selftest(verbose=not args.quiet) else 1
        if args.command == "lower-bound":
            if args.config:
                cfg = ExperimentConfig.from_json(args.config)
            else:
                cfg = lower_bound_config(args.horizons or DEFAULT_HORIZONS)
            if args.horizons:
                cfg = cfg.replace(horizons=tuple(args.horizons))
            cfg = _apply_overrides(cfg, args)
            gap = measurability_audit(cfg, cfg.horizons[0], cfg.horizons[0] // 2)
            print(f"measurability audit: max bid change before the cut = {gap:g}")
            return _execute(cfg, need_fit=True)
        cfg = _apply_overrides(ExperimentConfig.from_json(args.config), args)
        return _execute(cfg, need_fit=args.command == "scaling")
    except CtxBidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
