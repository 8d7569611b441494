"""Run every shipped configuration and print a one-line summary per experiment.

    python3 scripts/run_all.py [--out reports] [--skip tfw-thermo]
"""

import argparse
import time
from pathlib import Path

from crystal_tdl.config import EXPERIMENTS
from crystal_tdl.harness import ExperimentError, run

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="reports")
    ap.add_argument("--skip", nargs="*", default=[])
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    failed = 0
    for name in EXPERIMENTS:
        if name in args.skip:
            continue
        t0 = time.perf_counter()
        try:
            rep = run(CONFIGS / f"{name}.ini", out_dir=Path(args.out) / name, workers=args.workers)
        except ExperimentError as exc:
            print(f"{name:15s} ERROR  {exc}")
            failed += 1
            continue
        secs = time.perf_counter() - t0
        bad = [c["name"] for c in rep.evaluate() if not c["passed"]]
        print(f"{name:15s} {'pass' if rep.passed else 'FAIL'}  {secs:7.1f} s  {', '.join(bad)}")
        failed += not rep.passed
    raise SystemExit(1 if failed else 0)


if __name__ == "__main__":
    main()
