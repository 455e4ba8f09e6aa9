"""One full tuning run on a synthetic multi-label dataset.

Writes the dataset to CSV (scores plus instance features), lets the tuner
calibrate its fidelity ceiling from short probes, runs one method to budget
exhaustion, and replays the ledger into the trajectory chart. The run
directory afterwards holds ledger.jsonl, trajectory.csv/svg, space.yaml,
final_metrics.json, and the incumbent checkpoint.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mtptune.cli import main as cli_main
from mtptune.dataio import save_features, save_scores, synth_multilabel


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--method", default="hyperband")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epoch-cap", type=int, default=27)
    ap.add_argument("--out", default="runs/tune-demo")
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    bundle = synth_multilabel(150, 6, 8, density=0.3, seed=args.seed)
    scores = os.path.join(args.out, "labels.csv")
    feats = os.path.join(args.out, "instance_features.csv")
    save_scores(bundle.train, scores)
    save_features(bundle.train.instance_ids, bundle.train.instance_features,
                  feats)

    run_dir = os.path.join(args.out, f"{args.method}-s{args.seed}")
    rc = cli_main(["tune", "--scores", scores, "--instance-features", feats,
                   "--name", "demo", "--method", args.method,
                   "--seed", str(args.seed), "--probes", "5",
                   "--epoch-cap", str(args.epoch_cap), "--out", run_dir])
    if rc != 0:
        raise SystemExit(rc)
    raise SystemExit(cli_main(["report", "--run", run_dir]))


if __name__ == "__main__":
    main()
