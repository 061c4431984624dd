"""Command line: ``run``, ``summarize``, ``budget`` and ``check-round``.

Exit codes: 0 success, 1 invalid configuration or input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .experiment import (
    ConfigError,
    SummaryError,
    budgets,
    build_matrix,
    check_round_for,
    format_float,
    load_config,
    resolve_iterations,
    run_experiment,
    summarize_dir,
)
from .linalg import NumericalError

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    path = run_experiment(cfg, Path(args.config).resolve().parent)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_summarize(args) -> int:
    path = summarize_dir(args.trace_dir, args.output)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_budget(args) -> int:
    cfg = load_config(args.config)
    base = Path(args.config).resolve().parent
    for point in cfg.points():
        point_cfg = cfg.at_point(point)
        _, truth = build_matrix(point_cfg.matrix, base)
        label = ", ".join(f"{k}={v}" for k, v in point.items()) or "base"
        print(f"[{label}] d={truth.d} k={point_cfg.k} q={point_cfg.q} p={point_cfg.p} "
              f"epsilon={format_float(point_cfg.epsilon)} tau={format_float(point_cfg.tau)}")
        print(f"  L (configured mode) = {resolve_iterations(point_cfg, truth)}")
        for name, b in budgets(point_cfg, truth).items():
            print(f"  {name}: L={b.iterations} bound_g2={format_float(b.bound_g2)} "
                  f"bound_uqg={format_float(b.bound_uqg)} admissible={str(b.admissible).lower()}")
    return EXIT_OK


def _cmd_check_round(args) -> int:
    cfg = load_config(args.config)
    rep = check_round_for(cfg, args.seed, Path(args.config).resolve().parent)
    print(f"(B, p)-round check, empirical: B={format_float(rep.B)} p={rep.p} n_mc={rep.n_mc} "
          f"projections={rep.n_projections}")
    print("t,norm_freq,proj_freq,threshold,pass")
    for i, t in enumerate(rep.t_grid):
        print(f"{format_float(t)},{format_float(rep.norm_freq[i])},{format_float(rep.proj_freq[i])},"
              f"{format_float(rep.threshold[i])},{str(bool(rep.passed[i])).lower()}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noisypower", description="Noisy power method experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run every sweep point and seed of a config")
    p.add_argument("config")
    p.set_defaults(fn=_cmd_run)
    p = sub.add_parser("summarize", help="collect final metrics of a trace directory")
    p.add_argument("trace_dir")
    p.add_argument("-o", "--output", default=None, help="summary path (default: <trace_dir>/summary.csv)")
    p.set_defaults(fn=_cmd_summarize)
    p = sub.add_parser("budget", help="print iteration counts and noise budgets")
    p.add_argument("config")
    p.set_defaults(fn=_cmd_budget)
    p = sub.add_parser("check-round", help="empirical (B, p)-round check of the config's stream")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_check_round)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        return args.fn(args)
    except (ConfigError, SummaryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
