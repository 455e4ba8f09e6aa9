"""Dataset files, synthetic generators, budget calibration, run directories.

Score files are CSV in one of two shapes:

* triplet form, header exactly ``instance_id,target_id,value``, one observed
  cell per row;
* dense form, first column instance ids, remaining header cells target ids,
  empty cells meaning unobserved.

Feature files are CSV with an id column followed by numeric columns. When a
feature file is supplied it must cover exactly the ids appearing in the score
files (train and test together).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .mtp import MtpDataset
from .space import ConfigSpace


class DataError(ValueError):
    """Malformed input data."""


class DuplicateCell(DataError):
    """The same (instance, target) cell appears twice."""


class UnknownId(DataError):
    """A feature file mentions an id absent from the score files."""


class MissingFeature(DataError):
    """A scored id has no row in the supplied feature file."""


@dataclass(frozen=True)
class DatasetBundle:
    """A training dataset plus an optional held-out test dataset."""

    name: str
    train: MtpDataset
    test: MtpDataset | None = None


def _parse_value(text: str, path: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{path}: non-numeric value {text!r} at {where}") from None


def _read_rows(path: str) -> list[list[str]]:
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if len(rows) < 2:
        raise DataError(f"{path}: needs a header and at least one data row")
    return rows


def load_scores(path: str) -> tuple[list[str], list[str], list[tuple[str, str, float]]]:
    """Parse a score file into id lists (in order of first appearance) and
    (instance_id, target_id, value) triplets."""
    rows = _read_rows(path)
    header = [c.strip() for c in rows[0]]
    triplets: list[tuple[str, str, float]] = []
    inst_ids: list[str] = []
    tgt_ids: list[str] = []
    seen_inst: set[str] = set()
    seen_tgt: set[str] = set()
    seen_cells: set[tuple[str, str]] = set()

    def note(i: str, j: str, v: float) -> None:
        if (i, j) in seen_cells:
            raise DuplicateCell(f"{path}: duplicate cell ({i}, {j})")
        seen_cells.add((i, j))
        if i not in seen_inst:
            seen_inst.add(i)
            inst_ids.append(i)
        if j not in seen_tgt:
            seen_tgt.add(j)
            tgt_ids.append(j)
        triplets.append((i, j, v))

    if header == ["instance_id", "target_id", "value"]:
        for ln, row in enumerate(rows[1:], start=2):
            if len(row) != 3:
                raise DataError(f"{path}: line {ln} needs 3 columns")
            note(row[0].strip(), row[1].strip(),
                 _parse_value(row[2], path, f"line {ln}"))
    else:
        targets = header[1:]
        if not targets:
            raise DataError(f"{path}: dense form needs target columns")
        for ln, row in enumerate(rows[1:], start=2):
            if len(row) != len(header):
                raise DataError(f"{path}: line {ln} has {len(row)} columns, "
                                f"expected {len(header)}")
            inst = row[0].strip()
            for j, cell in zip(targets, row[1:]):
                if cell.strip() == "":
                    continue  # unobserved cell
                note(inst, j, _parse_value(cell, path, f"line {ln}, column {j}"))
    if not triplets:
        raise DataError(f"{path}: no observed cells")
    return inst_ids, tgt_ids, triplets


def load_features(path: str) -> tuple[list[str], np.ndarray]:
    rows = _read_rows(path)
    width = len(rows[0]) - 1
    if width < 1:
        raise DataError(f"{path}: feature file needs at least one feature column")
    ids: list[str] = []
    data: list[list[float]] = []
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != width + 1:
            raise DataError(f"{path}: line {ln} has {len(row)} columns, "
                            f"expected {width + 1}")
        ids.append(row[0].strip())
        data.append([_parse_value(c, path, f"line {ln}") for c in row[1:]])
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate ids")
    return ids, np.array(data, dtype=float)


def _feature_rows(ids_needed: Sequence[str], feat_ids: list[str],
                  matrix: np.ndarray, path: str,
                  known: set[str]) -> np.ndarray:
    lookup = {fid: k for k, fid in enumerate(feat_ids)}
    for fid in feat_ids:
        if fid not in known:
            raise UnknownId(f"{path}: id {fid!r} does not appear in the score files")
    missing = [i for i in ids_needed if i not in lookup]
    if missing:
        raise MissingFeature(f"{path}: no feature row for id {missing[0]!r}")
    return matrix[[lookup[i] for i in ids_needed]]


def _build_dataset(inst_ids: list[str], tgt_ids: list[str],
                   triplets: list[tuple[str, str, float]],
                   inst_feat: np.ndarray | None,
                   tgt_feat: np.ndarray | None) -> MtpDataset:
    inst_pos = {i: k for k, i in enumerate(inst_ids)}
    tgt_pos = {j: k for k, j in enumerate(tgt_ids)}
    return MtpDataset(
        instance_ids=tuple(inst_ids), target_ids=tuple(tgt_ids),
        rows=np.array([inst_pos[t[0]] for t in triplets], dtype=int),
        cols=np.array([tgt_pos[t[1]] for t in triplets], dtype=int),
        values=np.array([t[2] for t in triplets], dtype=float),
        instance_features=inst_feat, target_features=tgt_feat,
    )


def load_bundle(scores_path: str, instance_features_path: str | None = None,
                target_features_path: str | None = None,
                test_path: str | None = None,
                name: str | None = None) -> DatasetBundle:
    """Assemble a dataset bundle from CSV files.

    Feature files must cover every id scored anywhere in the bundle and may
    not mention ids that never occur.
    """
    inst_ids, tgt_ids, triplets = load_scores(scores_path)
    test_parsed = load_scores(test_path) if test_path else None
    known_inst = set(inst_ids) | (set(test_parsed[0]) if test_parsed else set())
    known_tgt = set(tgt_ids) | (set(test_parsed[1]) if test_parsed else set())

    inst_file = tgt_file = None
    if instance_features_path:
        inst_file = load_features(instance_features_path)
    if target_features_path:
        tgt_file = load_features(target_features_path)

    def side_features(file, needed, known):
        if file is None:
            return None
        ids, matrix = file
        path = instance_features_path if file is inst_file else target_features_path
        return _feature_rows(needed, ids, matrix, path, known)

    train = _build_dataset(
        inst_ids, tgt_ids, triplets,
        side_features(inst_file, inst_ids, known_inst),
        side_features(tgt_file, tgt_ids, known_tgt),
    )
    test = None
    if test_parsed:
        t_inst, t_tgt, t_triplets = test_parsed
        test = _build_dataset(
            t_inst, t_tgt, t_triplets,
            side_features(inst_file, t_inst, known_inst),
            side_features(tgt_file, t_tgt, known_tgt),
        )
    if name is None:
        name = os.path.splitext(os.path.basename(scores_path))[0]
    return DatasetBundle(name=name, train=train, test=test)


def save_scores(d: MtpDataset, path: str) -> None:
    """Triplet-form CSV; floats via repr round-trip bit-identically."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance_id", "target_id", "value"])
        for r, c, v in zip(d.rows, d.cols, d.values):
            writer.writerow([d.instance_ids[r], d.target_ids[c], repr(float(v))])


def save_features(ids: Sequence[str], matrix: np.ndarray, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"f{k}" for k in range(matrix.shape[1])])
        for i, row in zip(ids, matrix):
            writer.writerow([i] + [repr(float(v)) for v in row])


# ----------------------------------------------------------------------
# synthetic datasets
# ----------------------------------------------------------------------


def synth_matrix_completion(n: int, m: int, rank: int, noise_std: float,
                            observed_fraction: float = 1.0, seed: int = 0,
                            return_factors: bool = False):
    """Low-rank score matrix Y = U V^T + noise with a random observed mask.

    No side features, real-valued scores. With ``return_factors`` the exact
    generating factors come back for residual checks.
    """
    if rank < 1 or rank > min(n, m):
        raise ValueError("rank must lie in [1, min(n, m)]")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    if not 0 < observed_fraction <= 1:
        raise ValueError("observed_fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(n, rank))
    v = rng.normal(size=(m, rank))
    y = u @ v.T
    if noise_std > 0:
        y = y + rng.normal(0.0, noise_std, size=(n, m))
    k = max(int(math.floor(n * m * observed_fraction + 0.5)), 1)
    cells = rng.permutation(n * m)[:k]
    rows, cols = np.divmod(cells, m)
    order = np.argsort(cells)
    rows, cols = rows[order], cols[order]
    ds = MtpDataset(
        instance_ids=tuple(f"i{i}" for i in range(n)),
        target_ids=tuple(f"t{j}" for j in range(m)),
        rows=rows, cols=cols, values=y[rows, cols],
    )
    bundle = DatasetBundle(name=f"synth-mc-{n}x{m}-r{rank}-s{seed}", train=ds)
    if return_factors:
        return bundle, u, v
    return bundle


def synth_multilabel(n: int, m: int, d_x: int, density: float = 0.3,
                     seed: int = 0) -> DatasetBundle:
    """Linear-signal binary labels over Gaussian instance features.

    Per-target thresholds sit at the empirical (1 - density) quantile of the
    target's linear scores, so each label's positive rate tracks ``density``.
    Fully observed, instance features only.
    """
    if d_x < 1:
        raise ValueError("d_x must be at least 1")
    if not 0 < density < 1:
        raise ValueError("density must lie in (0, 1)")
    if n < 2 or m < 1:
        raise ValueError("need at least 2 instances and 1 target")
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d_x))
    w = rng.normal(size=(d_x, m))
    scores = x @ w
    tau = np.quantile(scores, 1.0 - density, axis=0)
    labels = (scores >= tau[None, :]).astype(float)
    rows, cols = np.divmod(np.arange(n * m), m)
    ds = MtpDataset(
        instance_ids=tuple(f"i{i}" for i in range(n)),
        target_ids=tuple(f"t{j}" for j in range(m)),
        rows=rows, cols=cols, values=labels[rows, cols],
        instance_features=x,
    )
    return DatasetBundle(name=f"synth-mlc-{n}x{m}-s{seed}", train=ds)


# ----------------------------------------------------------------------
# fidelity ceiling calibration
# ----------------------------------------------------------------------


def calibrate_max_budget(probe: Callable[[dict, int], int], space: ConfigSpace,
                         eta: int = 3, n_probe: int = 20, epoch_cap: int = 81,
                         seed: int = 0) -> int:
    """Pick the fidelity ceiling R from short random probes.

    ``probe(config, epoch_cap)`` trains one random configuration to the cap
    with early stopping and returns its best validation epoch. R is the mean
    best epoch rounded up to the nearest power of eta, clamped to
    [eta, epoch_cap]. Probes that raise are skipped; all failing is an error.
    """
    if eta < 2 or n_probe < 1 or epoch_cap < eta:
        raise ValueError("need eta >= 2, n_probe >= 1, epoch_cap >= eta")
    rng = np.random.default_rng(seed)
    best_epochs: list[int] = []
    for _ in range(n_probe):
        config = space.sample(rng)
        try:
            best_epochs.append(int(probe(config, epoch_cap)))
        except Exception:
            continue
    if not best_epochs:
        raise RuntimeError("every calibration probe failed")
    mean = sum(best_epochs) / len(best_epochs)
    r = eta
    while r < mean:
        r *= eta
    return min(r, epoch_cap)


# ----------------------------------------------------------------------
# run directories
# ----------------------------------------------------------------------


class RunDirectory:
    """Filesystem layout of one tuning run."""

    def __init__(self, path: str):
        self.path = path
        os.makedirs(path, exist_ok=True)
        os.makedirs(self.checkpoints_dir, exist_ok=True)

    @property
    def ledger_path(self) -> str:
        return os.path.join(self.path, "ledger.jsonl")

    @property
    def trajectory_path(self) -> str:
        return os.path.join(self.path, "trajectory.csv")

    @property
    def space_path(self) -> str:
        return os.path.join(self.path, "space.yaml")

    @property
    def metrics_path(self) -> str:
        return os.path.join(self.path, "final_metrics.json")

    @property
    def checkpoints_dir(self) -> str:
        return os.path.join(self.path, "checkpoints")

    def checkpoint_path(self, trial_id: int) -> str:
        return os.path.join(self.checkpoints_dir, f"trial-{trial_id}.ckpt")
