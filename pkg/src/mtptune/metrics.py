"""Evaluation metrics and cross-dataset rank aggregation.

Tie conventions are pinned so results are reproducible across
implementations: area under the precision-recall curve is average precision
with tied scores collapsed into one group (precision measured at the group
boundary), and area under the ROC curve is the Mann-Whitney statistic with
ties counting one half.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


class NoPositives(ValueError):
    """Metric undefined: no positive labels present."""


class NoValidTargets(ValueError):
    """Macro average undefined: every target was degenerate."""


def _as_1d(*arrays: Sequence[float]) -> list[np.ndarray]:
    out = [np.asarray(a, dtype=float).ravel() for a in arrays]
    if len({len(a) for a in out}) != 1:
        raise ValueError("arrays must have equal length")
    return out


def aupr(scores: Sequence[float], labels: Sequence[float]) -> float:
    """Average precision with grouped ties."""
    s, y = _as_1d(scores, labels)
    if len(s) == 0:
        raise ValueError("empty input")
    total_pos = float(y.sum())
    if total_pos == 0:
        raise NoPositives("no positive labels")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    ends = np.append(np.nonzero(np.diff(s))[0], len(s) - 1)
    cum_tp = np.cumsum(y)[ends]
    cum_n = ends + 1.0
    group_tp = np.diff(np.concatenate([[0.0], cum_tp]))
    return float(np.sum(group_tp * (cum_tp / cum_n)) / total_pos)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks, ascending, with tied values sharing the mean rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=float)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auroc(scores: Sequence[float], labels: Sequence[float]) -> float:
    """Probability a random positive outscores a random negative, ties half."""
    s, y = _as_1d(scores, labels)
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0:
        raise NoPositives("no positive labels")
    if n_neg == 0:
        raise ValueError("no negative labels")
    ranks = _average_ranks(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def micro_rmse(y_true: Sequence[float], y_pred: Sequence[float]) -> float:
    t, p = _as_1d(y_true, y_pred)
    if len(t) == 0:
        raise ValueError("empty input")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def _per_target(target_idx: np.ndarray) -> list[np.ndarray]:
    targets = np.unique(target_idx)
    return [np.nonzero(target_idx == j)[0] for j in targets]


def _macro(fn, scores: np.ndarray, labels: np.ndarray,
           target_idx: np.ndarray) -> float:
    vals = []
    for sel in _per_target(target_idx):
        y = labels[sel]
        if y.sum() == 0 or y.sum() == len(y):
            continue  # needs at least one positive and one negative
        vals.append(fn(scores[sel], y))
    if not vals:
        raise NoValidTargets("no target has both classes")
    return float(np.mean(vals))


def macro_aupr(scores, labels, target_idx) -> float:
    s, y, t = _as_1d(scores, labels, target_idx)
    return _macro(aupr, s, y, t)


def micro_aupr(scores, labels) -> float:
    return aupr(*_as_1d(scores, labels))


def macro_auroc(scores, labels, target_idx) -> float:
    s, y, t = _as_1d(scores, labels, target_idx)
    return _macro(auroc, s, y, t)


def micro_auroc(scores, labels) -> float:
    return auroc(*_as_1d(scores, labels))


def macro_rrmse(y_true, y_pred, target_idx,
                train_target_means: Mapping[int, float]) -> float:
    """Root of per-target squared error relative to the train-mean predictor.

    The denominator for target j sums (train_mean_j - y)^2 over its test
    cells; targets with a zero denominator or no train mean are skipped.
    """
    t, p, idx = _as_1d(y_true, y_pred, target_idx)
    vals = []
    for sel in _per_target(idx.astype(int)):
        j = int(idx[sel[0]])
        mean_j = train_target_means.get(j)
        if mean_j is None or not math.isfinite(mean_j):
            continue
        den = float(np.sum((mean_j - t[sel]) ** 2))
        if den <= 0:
            continue
        num = float(np.sum((p[sel] - t[sel]) ** 2))
        vals.append(math.sqrt(num / den))
    if not vals:
        raise NoValidTargets("every target had a degenerate denominator")
    return float(np.mean(vals))


# ----------------------------------------------------------------------
# metric specification
# ----------------------------------------------------------------------

_METRIC_NAMES = ("aupr", "auroc", "rmse", "rrmse")


@dataclass(frozen=True)
class MetricSpec:
    """Named metric plus averaging mode and ranking direction."""

    name: str
    averaging: str  # macro | micro

    def __post_init__(self) -> None:
        if self.name not in _METRIC_NAMES:
            raise ValueError(f"unknown metric {self.name!r}")
        if self.averaging not in ("macro", "micro"):
            raise ValueError("averaging must be macro or micro")
        if self.name == "rrmse" and self.averaging != "macro":
            raise ValueError("rrmse is defined with macro averaging only")
        if self.name == "rmse" and self.averaging != "micro":
            raise ValueError("rmse is defined with micro averaging only")

    @property
    def higher_is_better(self) -> bool:
        return self.name in ("aupr", "auroc")

    @property
    def label(self) -> str:
        return f"{self.averaging}_{self.name}"

    @classmethod
    def parse(cls, text: str) -> "MetricSpec":
        """Parse forms like "macro-aupr" or "micro_rmse"."""
        parts = text.replace("_", "-").split("-")
        if len(parts) != 2:
            raise ValueError(f"metric {text!r} should look like 'macro-aupr'")
        return cls(name=parts[1], averaging=parts[0])


def evaluate_metric(spec: MetricSpec, y_true, y_pred, target_idx,
                    train_target_means: Mapping[int, float] | None = None) -> float:
    if spec.name == "rmse":
        return micro_rmse(y_true, y_pred)
    if spec.name == "rrmse":
        if train_target_means is None:
            raise ValueError("rrmse needs per-target train means")
        return macro_rrmse(y_true, y_pred, target_idx, train_target_means)
    if spec.name == "aupr":
        if spec.averaging == "micro":
            return micro_aupr(y_pred, y_true)
        return macro_aupr(y_pred, y_true, target_idx)
    if spec.averaging == "micro":
        return micro_auroc(y_pred, y_true)
    return macro_auroc(y_pred, y_true, target_idx)


# ----------------------------------------------------------------------
# rank over time
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class RankingTable:
    """Average rank of each method over a normalized time grid."""

    methods: tuple[str, ...]
    fractions: np.ndarray
    avg_ranks: dict[str, np.ndarray]
    end_points: dict[str, float]


def _value_at(points: Sequence[tuple[float, float]], t: float) -> float | None:
    times = [p[0] for p in points]
    k = int(np.searchsorted(times, t, side="right")) - 1
    if k < 0:
        return None  # not started yet
    return points[k][1]


def rank_over_time(trajectories: Mapping[str, Mapping[str, Sequence[tuple[float, float]]]],
                   metric: MetricSpec, resolution: int = 100) -> RankingTable:
    """Average method ranks across datasets over normalized time.

    Each trajectory is a step function (last value carried forward). Per
    dataset, time normalizes by the longest end time of any method there.
    Methods whose first point lies beyond a grid instant rank last at that
    instant; ties share averaged ranks, so the ranks at any instant sum to
    k(k+1)/2 for k methods.
    """
    methods = tuple(trajectories)
    if len(methods) < 2:
        raise ValueError("ranking needs at least two methods")
    datasets = sorted({d for m in methods for d in trajectories[m]})
    if not datasets:
        raise ValueError("no datasets")
    for m in methods:
        for d in datasets:
            if d not in trajectories[m] or not trajectories[m][d]:
                raise ValueError(f"method {m!r} has no trajectory on {d!r}")
    if resolution < 1:
        raise ValueError("resolution must be positive")
    fractions = np.arange(1, resolution + 1) / resolution
    total = {m: np.zeros(resolution) for m in methods}
    end_points = {m: 0.0 for m in methods}
    k = len(methods)
    for d in datasets:
        t_max = max(trajectories[m][d][-1][0] for m in methods)
        for m in methods:
            end_points[m] += trajectories[m][d][-1][0] / t_max
        for gi, f in enumerate(fractions):
            t = f * t_max
            values = {m: _value_at(trajectories[m][d], t) for m in methods}
            started = [m for m in methods if values[m] is not None]
            unstarted = [m for m in methods if values[m] is None]
            if started:
                vals = np.array([values[m] for m in started])
                if metric.higher_is_better:
                    vals = -vals
                ranks = _average_ranks(vals)
                for m, r in zip(started, ranks):
                    total[m][gi] += r
            if unstarted:
                shared = (len(started) + 1 + k) / 2.0
                for m in unstarted:
                    total[m][gi] += shared
    n_data = len(datasets)
    return RankingTable(
        methods=methods,
        fractions=fractions,
        avg_ranks={m: total[m] / n_data for m in methods},
        end_points={m: end_points[m] / n_data for m in methods},
    )


def ranking_to_csv(table: RankingTable, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "t", "avg_rank"])
        for m in table.methods:
            for f, r in zip(table.fractions, table.avg_ranks[m]):
                writer.writerow([m, repr(float(f)), repr(float(r))])


def endpoints_to_csv(table: RankingTable, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "avg_end_fraction"])
        for m in table.methods:
            writer.writerow([m, repr(float(table.end_points[m]))])


def trajectory_to_csv(points: Sequence[tuple[float, float, float]], path: str) -> None:
    """Rows of (time, val_loss, test_metric)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "val_loss", "test_metric"])
        for t, v, s in points:
            writer.writerow([repr(float(t)), repr(float(v)), repr(float(s))])
