"""Run the default suite and write a JSONL report plus a CSV projection.

    python3 scripts/run_default_suite.py --seed 0 --out reports/default
"""

import argparse
import pathlib
import sys
import time

from prulab.cli import summarize, write_csv, write_report
from prulab.verify import run_suite


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=8)
    ap.add_argument("--out", default="reports/default")
    ap.add_argument("--timing", action="store_true", help="keep runtimes (the report is then not reproducible)")
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    results = run_suite("default", args.seed, args.threads)
    wall = time.perf_counter() - t0
    with open(out.with_suffix(".jsonl"), "w") as fh:
        write_report(results, fh, args.timing, suite="default", seed=args.seed)
    write_csv(results, str(out.with_suffix(".csv")), args.timing)
    for r in results:
        print(f"{r.status:>12}  {r.check:<16} {r.params}")
    print(f"wall clock {wall:.1f}s on {args.threads} threads")
    return 0 if summarize(results)["summary"]["all_pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
