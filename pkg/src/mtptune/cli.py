"""Command line entry points.

Subcommands:

* ``infer``     answer the routing questions and name the problem setting
* ``tune``      run one tuning method on one dataset, writing a run directory
* ``benchmark`` cross datasets x methods x repeats, with rank-over-time tables
* ``report``    regenerate the derived CSVs and SVG charts of a finished run

The default output root is ``$MTPTUNE_OUT`` (falling back to ``./runs``).
Exit code 0 means no errors; data and routing problems print one
``error:`` line naming the offending file or flag and exit 1.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from typing import Sequence

import numpy as np

from . import mtp
from .dataio import (DataError, DatasetBundle, RunDirectory, calibrate_max_budget,
                     load_bundle, synth_matrix_completion, synth_multilabel)
from .engine import METHODS, RunResult, TrialLedger, TunerSpec, run
from .metrics import (MetricSpec, _value_at, endpoints_to_csv, rank_over_time,
                      ranking_to_csv, trajectory_to_csv)
from .network import FeasibilityError, save_checkpoint
from .objective import (MtpTrainingObjective, NoMatchingSetting,
                        assemble_problem)
from .svg import line_chart

_Q_FLAGS = ("q1", "q2", "q3", "q4", "q5", "q6")


def _out_root(value: str | None) -> str:
    return value or os.environ.get("MTPTUNE_OUT") or "runs"


def _add_data_args(p: argparse.ArgumentParser, scores_required: bool) -> None:
    p.add_argument("--scores", required=scores_required,
                   help="training score CSV (triplet or dense form)")
    p.add_argument("--instance-features", help="instance feature CSV")
    p.add_argument("--target-features", help="target feature CSV")
    p.add_argument("--test", help="held-out test score CSV")
    p.add_argument("--name", help="dataset name (default: scores file stem)")


def _add_answer_args(p: argparse.ArgumentParser) -> None:
    for q in ("q1", "q2", "q3", "q5"):
        p.add_argument(f"--{q}", choices=(mtp.YES, mtp.NO))
    p.add_argument("--q4", choices=(mtp.YES, mtp.NO, mtp.YES_HIERARCHY))
    p.add_argument("--q6", choices=mtp.Q6_VALUES)


def _resolve_answers(args, bundle: DatasetBundle | None) -> mtp.Answers:
    overrides = {q: getattr(args, q) for q in _Q_FLAGS if getattr(args, q)}
    if bundle is None:
        missing = [q for q in _Q_FLAGS if q not in overrides]
        if missing:
            raise DataError(f"without --scores, every question flag is needed; "
                            f"missing --{', --'.join(missing)}")
        return mtp.Answers(**overrides)
    auto = mtp.auto_answer(bundle.train, bundle.test)
    merged = {q: overrides.get(q, getattr(auto, q)) for q in _Q_FLAGS}
    return mtp.Answers(**merged)


def _load_from_args(args) -> DatasetBundle:
    return load_bundle(args.scores,
                       instance_features_path=args.instance_features,
                       target_features_path=args.target_features,
                       test_path=args.test, name=args.name)


def _parse_dataset_spec(spec: str) -> DatasetBundle:
    """Either a score CSV path or an inline synthetic spec like
    ``synth:mc:n=100,m=80,rank=3,noise=0.1,frac=0.3,seed=0`` or
    ``synth:mlc:n=200,m=6,d=10,density=0.3,seed=0``."""
    if not spec.startswith("synth:"):
        return load_bundle(spec)
    kind, _, rest = spec[len("synth:"):].partition(":")
    try:
        kv = dict(item.split("=", 1) for item in rest.split(",") if item)
    except ValueError:
        raise DataError(f"--dataset {spec!r}: malformed key=value list") from None
    try:
        if kind == "mc":
            return synth_matrix_completion(
                n=int(kv.get("n", 100)), m=int(kv.get("m", 80)),
                rank=int(kv.get("rank", 3)), noise_std=float(kv.get("noise", 0.1)),
                observed_fraction=float(kv.get("frac", 1.0)),
                seed=int(kv.get("seed", 0)))
        if kind == "mlc":
            return synth_multilabel(
                n=int(kv.get("n", 200)), m=int(kv.get("m", 6)),
                d_x=int(kv.get("d", 10)), density=float(kv.get("density", 0.3)),
                seed=int(kv.get("seed", 0)))
    except ValueError as exc:
        raise DataError(f"--dataset {spec!r}: {exc}") from None
    raise DataError(f"--dataset {spec!r}: unknown synthetic kind {kind!r}")


def _print_no_match(answers: mtp.Answers) -> None:
    print("no matching setting")
    for setting, dist in mtp.nearest_settings(answers):
        plural = "answer differs" if dist == 1 else "answers differ"
        print(f"nearest: {setting.value} ({dist} {plural})")


# ----------------------------------------------------------------------
# infer
# ----------------------------------------------------------------------


def cmd_infer(args) -> int:
    bundle = _load_from_args(args) if args.scores else None
    answers = _resolve_answers(args, bundle)
    print(" ".join(f"{q}={getattr(answers, q)}" for q in _Q_FLAGS))
    matches = mtp.infer_setting(answers)
    if not matches:
        _print_no_match(answers)
        return 0
    for setting in matches:
        print(f"setting: {setting.value}")
    regime = mtp.validation_setting(answers.q1, answers.q2)
    print(f"validation: {regime.value}")
    if bundle is not None:
        if regime in (mtp.ValidationSetting.B, mtp.ValidationSetting.D) \
                and bundle.train.instance_features is None:
            print("warning: novel instances need instance features; none supplied")
        if regime in (mtp.ValidationSetting.C, mtp.ValidationSetting.D) \
                and bundle.train.target_features is None:
            print("warning: novel targets need target features; none supplied")
    return 0


# ----------------------------------------------------------------------
# tune
# ----------------------------------------------------------------------


def _build_problem(args, bundle: DatasetBundle):
    answers = _resolve_answers(args, bundle)
    setting = None
    if args.setting:
        try:
            setting = mtp.MtpSetting(args.setting)
        except ValueError:
            names = ", ".join(s.value for s in mtp.MtpSetting)
            raise DataError(f"--setting {args.setting!r}: expected one of {names}")
    metric = MetricSpec.parse(args.metric) if args.metric else None
    return assemble_problem(bundle, answers=answers, setting=setting,
                            metric=metric, seed=args.seed,
                            test_fraction=args.test_fraction,
                            val_fraction=args.val_fraction)


def _pick_max_budget(args, objective, space) -> int:
    if args.max_budget is not None:
        return args.max_budget
    r = calibrate_max_budget(objective.probe_best_epoch, space, eta=args.eta,
                             n_probe=args.probes, epoch_cap=args.epoch_cap,
                             seed=args.seed)
    print(f"calibrated max budget: {r} epochs")
    return r


def _write_run(rd: RunDirectory, problem, result: RunResult,
               record_timing: bool) -> None:
    result.ledger.to_jsonl(rd.ledger_path, record_timing=record_timing)
    problem.space.to_file(rd.space_path)
    trajectory_to_csv(result.trajectory_points(problem.metric.label),
                      rd.trajectory_path)
    summary = {
        "dataset": problem.name,
        "setting": problem.setting.value,
        "validation": problem.validation.value,
        "loss": problem.loss,
        "metric": problem.metric.label,
        "method": result.ledger.metadata["method"],
        "seed": result.ledger.metadata["seed"],
        "max_budget": result.ledger.metadata["max_budget"],
        "eta": result.ledger.metadata["eta"],
        "total_budget": result.ledger.metadata["total_budget"],
        "incumbent": None,
    }
    if result.incumbent is not None:
        summary["incumbent"] = {
            "trial": result.incumbent.id,
            "config": result.incumbent.config,
            "budget": result.incumbent.budget,
            "val_loss": result.incumbent.val_loss,
            "test_metrics": result.incumbent.test_metrics,
        }
        ckpt = result.checkpoints.get(result.incumbent.id)
        if ckpt is not None:
            save_checkpoint(ckpt, rd.checkpoint_path(result.incumbent.id))
    with open(rd.metrics_path, "w") as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")


def cmd_tune(args) -> int:
    if args.method not in METHODS:
        raise DataError(f"--method {args.method!r}: expected one of "
                        f"{', '.join(METHODS)}")
    bundle = _load_from_args(args)
    try:
        problem = _build_problem(args, bundle)
    except NoMatchingSetting as exc:
        _print_no_match(exc.answers)
        return 1
    print(f"dataset {bundle.name}: {problem.describe()}")
    objective = MtpTrainingObjective(problem, head=args.head,
                                     patience=args.patience,
                                     base_seed=args.seed)
    max_budget = _pick_max_budget(args, objective, problem.space)
    spec = TunerSpec(method=args.method, max_budget=max_budget, eta=args.eta,
                     total_budget=args.total_budget, seed=args.seed,
                     parallelism=args.parallelism)
    result = run(spec, problem.space, objective)
    result.ledger.metadata["dataset"] = problem.name
    result.ledger.metadata["metric"] = problem.metric.label

    out = args.out or os.path.join(
        _out_root(None), f"{problem.name}-{args.method}-s{args.seed}")
    rd = RunDirectory(out)
    _write_run(rd, problem, result, args.record_timing)
    if result.incumbent is None:
        print("no trial completed")
        return 1
    metrics = " ".join(f"{k}={v:.6f}"
                       for k, v in sorted(result.incumbent.test_metrics.items()))
    print(f"incumbent trial {result.incumbent.id} "
          f"val_loss={result.incumbent.val_loss:.6f} {metrics}".rstrip())
    print(f"wrote {rd.path}")
    return 0


# ----------------------------------------------------------------------
# benchmark
# ----------------------------------------------------------------------


def _average_runs(runs: list[list[tuple[float, float]]]) -> list[tuple[float, float]]:
    """Pointwise mean of step functions, from the last first-time onward."""
    start = max(r[0][0] for r in runs)
    times = sorted({t for r in runs for t, _ in r if t >= start} | {start})
    out = []
    for t in times:
        vals = [_value_at(r, t) for r in runs]
        out.append((t, float(np.mean([v for v in vals if v is not None]))))
    return out


def cmd_benchmark(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise DataError(f"--methods {m!r}: expected one of {', '.join(METHODS)}")
    if len(methods) < 2:
        raise DataError("--methods: benchmarking needs at least two methods")
    bundles = [_parse_dataset_spec(spec) for spec in args.dataset]
    names = [b.name for b in bundles]
    if len(set(names)) != len(names):
        raise DataError("--dataset: dataset names collide; pass distinct specs")

    out = RunDirectory(args.out or os.path.join(_out_root(None), "benchmark"))
    ledger_dir = os.path.join(out.path, "ledgers")
    os.makedirs(ledger_dir, exist_ok=True)

    problems = {}
    for bundle in bundles:
        problems[bundle.name] = assemble_problem(
            bundle, seed=args.seed, test_fraction=args.test_fraction,
            val_fraction=args.val_fraction)
        print(f"dataset {bundle.name}: {problems[bundle.name].describe()}")

    # trajectories[method][dataset]: repeat-averaged, lower-is-better values
    trajectories: dict[str, dict[str, list[tuple[float, float]]]] = \
        {m: {} for m in methods}
    summary: dict[str, dict[str, dict[str, float]]] = {}
    for name, problem in problems.items():
        sign = -1.0 if problem.metric.higher_is_better else 1.0
        summary[name] = {}
        for method in methods:
            finals = []
            runs = []
            for rep in range(args.repeats):
                seed = args.seed + rep
                objective = MtpTrainingObjective(problem, patience=args.patience,
                                                 base_seed=seed)
                spec = TunerSpec(method=method, max_budget=args.max_budget,
                                 eta=args.eta, total_budget=args.total_budget,
                                 seed=seed, parallelism=args.parallelism)
                result = run(spec, problem.space, objective)
                result.ledger.metadata["dataset"] = name
                result.ledger.metadata["metric"] = problem.metric.label
                result.ledger.to_jsonl(os.path.join(
                    ledger_dir, f"{name}__{method}__r{rep}.jsonl"),
                    record_timing=args.record_timing)
                points = [(t, m) for t, _, m in
                          result.trajectory_points(problem.metric.label)
                          if not math.isnan(m)]
                if not points:
                    raise DataError(
                        f"method {method} produced no {problem.metric.label} "
                        f"value on {name}; cannot rank")
                runs.append(points)
                finals.append(points[-1][1])
                print(f"  {name} {method} repeat {rep}: "
                      f"{problem.metric.label}={points[-1][1]:.6f}")
            trajectories[method][name] = [
                (t, sign * v) for t, v in _average_runs(runs)]
            summary[name][method] = {
                "final_mean": float(np.mean(finals)),
                "final_std": float(np.std(finals)),
            }

    # all values are lower-is-better after the sign flip above
    table = rank_over_time(trajectories, MetricSpec("rmse", "micro"),
                           resolution=args.resolution)
    ranking_to_csv(table, os.path.join(out.path, "rank_over_time.csv"))
    endpoints_to_csv(table, os.path.join(out.path, "endpoints.csv"))
    for name, problem in problems.items():
        # per-dataset averaged trajectories, one block per method
        path = os.path.join(out.path, f"trajectory-{name}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "time", problem.metric.label])
            for m in methods:
                for t, v in trajectories[m][name]:
                    raw = -v if problem.metric.higher_is_better else v
                    writer.writerow([m, repr(float(t)), repr(float(raw))])
    with open(os.path.join(out.path, "summary.json"), "w") as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    _benchmark_charts(out.path)

    print("average rank at the final instant:")
    for m in table.methods:
        print(f"  {m}: {table.avg_ranks[m][-1]:.3f}")
    print(f"wrote {out.path}")
    return 0


# ----------------------------------------------------------------------
# report
# ----------------------------------------------------------------------


def _read_csv(path: str) -> list[list[str]]:
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if len(rows) < 2:
        raise DataError(f"{path}: needs a header and at least one row")
    return rows


def trajectory_from_ledger(ledger: TrialLedger,
                           metric_label: str) -> list[tuple[float, float, float]]:
    """Replay a serial run's ledger into its incumbent trajectory."""
    budget_of: dict[int, int] = {}
    consumed = 0
    best = math.inf
    points: list[tuple[float, float, float]] = []
    for t in ledger.trials:
        delta = t.budget
        if t.parent_id is not None:
            delta = t.budget - budget_of[t.parent_id]
        budget_of[t.id] = t.budget
        consumed += delta
        if t.status == "completed" and t.val_loss is not None and t.val_loss < best:
            best = t.val_loss
            metric = t.test_metrics.get(metric_label, math.nan)
            point = (float(consumed), t.val_loss, metric)
            if points and points[-1][0] == point[0]:
                points[-1] = point
            else:
                points.append(point)
    if points and points[-1][0] < consumed:
        points.append((float(consumed), points[-1][1], points[-1][2]))
    return points


def _run_report(path: str) -> None:
    ledger = TrialLedger.from_jsonl(os.path.join(path, "ledger.jsonl"))
    label = ledger.metadata.get("metric", "metric")
    traj_path = os.path.join(path, "trajectory.csv")
    if ledger.metadata.get("parallelism", 1) == 1:
        points = trajectory_from_ledger(ledger, label)
        trajectory_to_csv(points, traj_path)
    else:
        rows = _read_csv(traj_path)
        points = [(float(a), float(b), float(c)) for a, b, c in rows[1:]]
    method = ledger.metadata.get("method", "run")
    line_chart({method: [(t, v) for t, v, _ in points]},
               os.path.join(path, "trajectory.svg"),
               title=ledger.metadata.get("dataset", ""),
               x_label="epochs", y_label="validation loss", step=True)
    completed = len(ledger.completed())
    print(f"{path}: {len(ledger.trials)} trials, {completed} completed, "
          f"best val_loss "
          f"{min((t.val_loss for t in ledger.completed()), default=math.nan):.6f}")


def _benchmark_charts(path: str) -> None:
    rows = _read_csv(os.path.join(path, "rank_over_time.csv"))
    series: dict[str, list[tuple[float, float]]] = {}
    for method, t, r in rows[1:]:
        series.setdefault(method, []).append((float(t), float(r)))
    line_chart(series, os.path.join(path, "rank_over_time.svg"),
               title="average rank over normalized time",
               x_label="fraction of budget", y_label="average rank")
    for fname in sorted(os.listdir(path)):
        if not (fname.startswith("trajectory-") and fname.endswith(".csv")):
            continue
        rows = _read_csv(os.path.join(path, fname))
        series = {}
        for method, t, v in rows[1:]:
            series.setdefault(method, []).append((float(t), float(v)))
        line_chart(series, os.path.join(path, fname[:-4] + ".svg"),
                   title=fname[len("trajectory-"):-4],
                   x_label="epochs", y_label=rows[0][2], step=True)


def cmd_report(args) -> int:
    if args.run:
        _run_report(args.run)
    if args.benchmark:
        _benchmark_charts(args.benchmark)
        print(f"refreshed charts in {args.benchmark}")
    return 0


# ----------------------------------------------------------------------
# argument wiring
# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mtptune",
        description="route multi-target prediction datasets and tune the "
                    "two-branch network under an epoch budget")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="name the problem setting")
    _add_data_args(p, scores_required=False)
    _add_answer_args(p)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("tune", help="tune one method on one dataset")
    _add_data_args(p, scores_required=True)
    _add_answer_args(p)
    p.add_argument("--method", default="hyperband")
    p.add_argument("--setting", help="force a problem setting by name")
    p.add_argument("--metric", help="report metric, e.g. macro-aupr")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eta", type=int, default=3)
    p.add_argument("--max-budget", type=int,
                   help="fidelity ceiling R in epochs (skips calibration)")
    p.add_argument("--total-budget", type=int,
                   help="epoch budget (default: one full bracket sweep)")
    p.add_argument("--probes", type=int, default=20,
                   help="calibration probe count")
    p.add_argument("--epoch-cap", type=int, default=81,
                   help="calibration training cap")
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--head", choices=("dot", "mlp"), default="dot")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--record-timing", action="store_true",
                   help="write wall-clock seconds into the ledger")
    p.add_argument("--out", help="run directory (default under $MTPTUNE_OUT)")
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("benchmark", help="compare methods across datasets")
    p.add_argument("--dataset", action="append", required=True,
                   help="score CSV path or synth:mc:…/synth:mlc:… spec; repeatable")
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eta", type=int, default=3)
    p.add_argument("--max-budget", type=int, default=27)
    p.add_argument("--total-budget", type=int)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--resolution", type=int, default=100,
                   help="rank-over-time grid points")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--record-timing", action="store_true")
    p.add_argument("--out", help="benchmark directory")
    p.set_defaults(fn=cmd_benchmark)

    p = sub.add_parser("report", help="regenerate CSVs and charts")
    p.add_argument("--run", help="a tune run directory")
    p.add_argument("--benchmark", help="a benchmark directory")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report" and not (args.run or args.benchmark):
        print("error: report needs --run or --benchmark", file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except (DataError, FeasibilityError, NoMatchingSetting, OSError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
