"""Run every suite on every golden config and print the combined report.

    python3 scripts/run_all.py --out results/ --jobs 4
"""

import argparse
import sys

from epsoracle import cli
from epsoracle.config import GOLDEN

COMMANDS = ("verify-theorem", "verify-identity", "train", "sample")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--configs", nargs="*", default=list(GOLDEN))
    args = p.parse_args()

    worst = 0
    for name in args.configs:
        out = f"{args.out}/{name}"
        for cmd in COMMANDS:
            worst = max(worst, cli.main([cmd, "--config", name, "--out", out, "--jobs", str(args.jobs)]))
    for name in args.configs:
        print(f"\n== {name}")
        cli.main(["report", f"{args.out}/{name}"])
    return worst


if __name__ == "__main__":
    sys.exit(main())
