"""Command-line entry points: run, validate, mms.

Exit codes: 0 success, 1 configuration error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__, mms
from .errors import ConfigError, PnpfError
from .experiments import parse_config, run_experiment


def _add_common(sub):
    sub.add_argument("--out", help="output directory (overrides the config)")
    sub.add_argument("--dt", type=float, help="time step (overrides the config)")
    sub.add_argument("--override", action="append", default=[],
                     metavar="SECTION.KEY=VALUE",
                     help="set any config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pnpf",
        description="Finite-volume simulator for non-isothermal ion transport")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    run = subs.add_parser("run", help="run the experiment described by a config")
    run.add_argument("config")
    _add_common(run)

    val = subs.add_parser("validate", help="parse and validate a config")
    val.add_argument("config")
    _add_common(val)

    acc = subs.add_parser("mms", help="manufactured-solution convergence study")
    acc.add_argument("--scheme", choices=("1", "2"), default="1")
    acc.add_argument("--levels", type=int, default=4,
                     help="number of refinement levels starting at h=1/8")
    acc.add_argument("--t-end", type=float, default=0.1)
    acc.add_argument("--out", help="directory for the convergence CSV")
    return parser


def _resolved_config(args):
    overrides = list(args.override)
    if args.out:
        overrides.append(f"run.out={args.out}")
    if args.dt is not None:
        overrides.append(f"time.dt={args.dt}")
    return parse_config(path=args.config, overrides=overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = _resolved_config(args)
            print(f"ok: {cfg.experiment} experiment, scheme {cfg.scheme}, "
                  f"out -> {cfg.out}")
            return 0
        if args.command == "run":
            cfg = _resolved_config(args)
            run_experiment(cfg)
            print(f"done: artifacts in {cfg.out}")
            return 0
        if args.command == "mms":
            sizes = tuple(8 * 2**k for k in range(args.levels))
            rows = mms.run_convergence_study(args.scheme, sizes=sizes,
                                             t_end=args.t_end)
            csv_text = mms.convergence_csv(rows)
            if args.out:
                os.makedirs(args.out, exist_ok=True)
                path = os.path.join(args.out, f"convergence_scheme{args.scheme}.csv")
                with open(path, "w", encoding="utf-8") as fh:
                    fh.write(csv_text)
                print(f"wrote {path}")
            else:
                sys.stdout.write(csv_text)
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except PnpfError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
