"""Command line entry point ``crystal-tdl``.

Exit status: 0 all checks passed, 1 some check failed, 2 configuration,
input or solver error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import SCHEMAS
from .errors import CrystalTDLError
from .harness import run, validate
from .rates import fit_rate
from .report import read_csv
from .sweep import WORKERS_ENV


def _cmd_run(args) -> int:
    report = run(args.config, out_dir=args.out, workers=args.workers, seed=args.seed)
    for c in report.evaluate():
        obs = "n/a" if c["observed"] is None else f"{c['observed']:.6g}"
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {obs} {c['op']} {c['threshold']}")
    print(f"{report.experiment}: {'passed' if report.passed else 'FAILED'}")
    return 0 if report.passed else 1


def _cmd_fit(args) -> int:
    xs, ys = read_csv(args.csv)
    fit = fit_rate(xs, ys, args.model)
    print(json.dumps(fit.to_dict(), sort_keys=True, indent=2))
    return 0


def _cmd_validate(args) -> int:
    cfg = validate(args.config)
    print(f"{args.config}: valid {cfg.experiment} configuration, sha256 {cfg.sha256}")
    if args.show:
        print(cfg.to_ini())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crystal-tdl", description="Thermodynamic-limit and Cauchy-Born experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a configured experiment")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="report directory (default: [output] dir)")
    r.add_argument("--workers", type=int, default=None, help=f"parallel sweep points (default: ${WORKERS_ENV} or 1)")
    r.add_argument("--seed", type=int, default=None, help="override the configured seed")
    r.set_defaults(func=_cmd_run)
    f = sub.add_parser("fit", help="fit a rate to the parameter/value columns of a report CSV")
    f.add_argument("csv")
    f.add_argument("--model", choices=("exp", "alg"), required=True)
    f.set_defaults(func=_cmd_fit)
    v = sub.add_parser("validate", help="check a configuration file")
    v.add_argument("config")
    v.add_argument("--show", action="store_true", help="print the resolved configuration")
    v.set_defaults(func=_cmd_validate)
    sub.add_parser("experiments", help="list experiment names").set_defaults(
        func=lambda a: print("\n".join(SCHEMAS)) or 0
    )
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CrystalTDLError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
