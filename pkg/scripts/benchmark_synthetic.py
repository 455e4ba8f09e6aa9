"""Rank the tuning methods across synthetic datasets.

Drives the ``mtptune benchmark`` command on a matrix-completion dataset and
a multi-label dataset, all five methods, several repeats. Writes the
rank-over-time table, per-dataset trajectory CSVs, and SVG charts into the
output directory. Expect a few minutes at the default sizes.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mtptune.cli import main as cli_main

DATASETS = (
    "synth:mc:n=60,m=40,rank=3,noise=0.1,frac=0.5,seed=0",
    "synth:mlc:n=120,m=6,d=8,density=0.3,seed=0",
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--max-budget", type=int, default=9)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/synthetic-benchmark")
    args = ap.parse_args()

    argv = ["benchmark", "--repeats", str(args.repeats),
            "--max-budget", str(args.max_budget), "--seed", str(args.seed),
            "--out", args.out]
    for spec in DATASETS:
        argv += ["--dataset", spec]
    raise SystemExit(cli_main(argv))


if __name__ == "__main__":
    main()
