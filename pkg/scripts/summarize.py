"""Print median tables from a results directory written by run_experiments.sh."""

import argparse
import csv
from pathlib import Path


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("results", nargs="?", default="results")
    args = parser.parse_args()
    for summary in sorted(Path(args.results).glob("*/summary.csv")):
        print(f"\n{summary.parent.name}")
        with open(summary, newline="") as fh:
            for row in csv.DictReader(fh):
                slow = row["slowdown_vs_reference"]
                print(f"  {row['filter']:>10} {row['metric']:>7} median {float(row['median']):10.4g}"
                      f"  95% CI [{float(row['bootstrap_low']):.4g}, {float(row['bootstrap_high']):.4g}]"
                      + (f"  {float(slow):.2f}x" if slow else "") + (f"  ({row['params']})" if row["params"] else ""))
    for sweep in sorted(Path(args.results).glob("*/sweep_summary.csv")):
        print(f"\n{sweep.parent.name}")
        with open(sweep, newline="") as fh:
            for row in csv.DictReader(fh):
                print(f"  c={row['value']:>6} {row['filter']:>10} {row['metric']} median {float(row['median']):.4g}")


if __name__ == "__main__":
    main()
