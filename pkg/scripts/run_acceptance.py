"""Run the acceptance battery and write one JSON line per criterion."""

import argparse
import json

from distflow.verify import format_line, run_suite


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--level", choices=("quick", "full"), default="quick")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--json", help="write results here as JSON lines")
    args = ap.parse_args()
    results = run_suite(args.level, args.workers, args.seed, echo=print)
    print(f"{sum(r.passed for r in results)}/{len(results)} passed")
    if args.json:
        with open(args.json, "w") as fh:
            for r in results:
                fh.write(r.summary() + "\n")


if __name__ == "__main__":
    main()
