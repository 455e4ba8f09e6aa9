"""Multi-target prediction data model and problem routing.

A dataset is a set of (instance, target, score) triplets over an n x m grid,
optionally with feature vectors on either side. Six questions about the data
route it to a named problem setting, and the first two questions alone fix
the validation regime:

  q1  does the test set contain novel instances?
  q2  does the test set contain novel targets?
  q3  are instance feature vectors available?
  q4  are target feature vectors available (possibly a label hierarchy)?
  q5  is the score matrix fully observed?
  q6  what is the score type (binary, nominal, ordinal, real)?
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

YES = "yes"
NO = "no"
YES_HIERARCHY = "yes_hierarchy"

Q6_VALUES = ("binary", "nominal", "ordinal", "real", "any")

# score values with more distinct reals than this are treated as real-valued
REAL_DISTINCT_THRESHOLD = 20


class MtpSetting(enum.Enum):
    MULTILABEL_CLASSIFICATION = "multi-label classification"
    MULTIVARIATE_REGRESSION = "multivariate regression"
    MULTITASK_LEARNING = "multi-task learning"
    HIERARCHICAL_MULTILABEL_CLASSIFICATION = "hierarchical multi-label classification"
    DYADIC_PREDICTION = "dyadic prediction"
    ZERO_SHOT_LEARNING = "zero-shot learning"
    MATRIX_COMPLETION = "matrix completion"
    HYBRID_MATRIX_COMPLETION = "hybrid matrix completion"
    COLD_START_COLLABORATIVE_FILTERING = "cold-start collaborative filtering"
    MULTIDIMENSIONAL_CLASSIFICATION = "multi-dimensional classification"


class ValidationSetting(enum.Enum):
    A = "A"  # known instances, known targets: hold out cells
    B = "B"  # novel instances, known targets: hold out instance rows
    C = "C"  # known instances, novel targets: hold out target columns
    D = "D"  # novel instances and targets: hold out both, drop mixed pairs


@dataclass(frozen=True)
class Answers:
    """Answers to the six routing questions."""

    q1: str
    q2: str
    q3: str
    q4: str
    q5: str
    q6: str

    def __post_init__(self) -> None:
        for name in ("q1", "q2", "q3", "q5"):
            if getattr(self, name) not in (YES, NO):
                raise ValueError(f"{name} must be yes or no")
        if self.q4 not in (YES, NO, YES_HIERARCHY):
            raise ValueError("q4 must be yes, no, or yes_hierarchy")
        if self.q6 not in Q6_VALUES:
            raise ValueError(f"q6 must be one of {Q6_VALUES}")


# Decision table: answer patterns in fixed row order. "-" is a wildcard.
# A row q4 of "yes" also accepts "yes_hierarchy" (a hierarchy is side
# information); a row demanding the hierarchy accepts only "yes_hierarchy".
_DECISION_TABLE: tuple[tuple[tuple[str, ...], MtpSetting], ...] = (
    ((YES, NO, YES, NO, YES, "binary"), MtpSetting.MULTILABEL_CLASSIFICATION),
    ((YES, NO, YES, NO, YES, "real"), MtpSetting.MULTIVARIATE_REGRESSION),
    ((YES, NO, YES, NO, NO, "-"), MtpSetting.MULTITASK_LEARNING),
    ((YES, NO, YES, YES_HIERARCHY, YES, "binary"),
     MtpSetting.HIERARCHICAL_MULTILABEL_CLASSIFICATION),
    ((YES, NO, YES, YES, NO, "-"), MtpSetting.DYADIC_PREDICTION),
    ((YES, YES, YES, YES, NO, "-"), MtpSetting.ZERO_SHOT_LEARNING),
    ((NO, NO, NO, NO, NO, "-"), MtpSetting.MATRIX_COMPLETION),
    ((NO, NO, YES, YES, NO, "-"), MtpSetting.HYBRID_MATRIX_COMPLETION),
    ((YES, YES, YES, YES, NO, "-"), MtpSetting.COLD_START_COLLABORATIVE_FILTERING),
    ((YES, NO, YES, NO, YES, "nominal"), MtpSetting.MULTIDIMENSIONAL_CLASSIFICATION),
)


def _answer_matches(required: str, given: str, question: int) -> bool:
    if required == "-" or given == "any":
        return True
    if question == 4 and required == YES:
        return given in (YES, YES_HIERARCHY)
    return required == given


def infer_setting(answers: Answers) -> list[MtpSetting]:
    """All decision-table rows compatible with the answers, in table order.

    Some answer patterns are genuinely ambiguous (zero-shot learning and
    cold-start collaborative filtering share a row pattern), so the result is
    a list. An empty list means no known setting matches.
    """
    given = (answers.q1, answers.q2, answers.q3, answers.q4, answers.q5, answers.q6)
    matches = []
    for required, setting in _DECISION_TABLE:
        if all(_answer_matches(r, g, q + 1)
               for q, (r, g) in enumerate(zip(required, given))):
            matches.append(setting)
    return matches


def nearest_settings(answers: Answers, k: int = 3) -> list[tuple[MtpSetting, int]]:
    """Closest rows by answer disagreement count, for error messages."""
    given = (answers.q1, answers.q2, answers.q3, answers.q4, answers.q5, answers.q6)
    scored = []
    for i, (required, setting) in enumerate(_DECISION_TABLE):
        dist = sum(0 if _answer_matches(r, g, q + 1) else 1
                   for q, (r, g) in enumerate(zip(required, given)))
        scored.append((dist, i, setting))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [(setting, dist) for dist, _, setting in scored[:k]]


def validation_setting(q1: str, q2: str) -> ValidationSetting:
    """The generalization regime implied by which sides hold novel entities."""
    if q1 not in (YES, NO) or q2 not in (YES, NO):
        raise ValueError("q1 and q2 must be yes or no")
    return {
        (NO, NO): ValidationSetting.A,
        (YES, NO): ValidationSetting.B,
        (NO, YES): ValidationSetting.C,
        (YES, YES): ValidationSetting.D,
    }[(q1, q2)]


def setting_validation(setting: MtpSetting) -> ValidationSetting:
    """The regime a problem setting's decision-table row implies."""
    for required, s in _DECISION_TABLE:
        if s == setting:
            return validation_setting(required[0], required[1])
    raise KeyError(setting)


# ----------------------------------------------------------------------
# datasets
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class MtpDataset:
    """Interaction triplets over an instance x target grid.

    ``rows``/``cols`` index into the id tuples; ``values`` holds the scores.
    Feature matrices, when present, align with the id tuples row for row.
    """

    instance_ids: tuple[str, ...]
    target_ids: tuple[str, ...]
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    instance_features: np.ndarray | None = None
    target_features: np.ndarray | None = None

    def __post_init__(self) -> None:
        n, m = len(self.instance_ids), len(self.target_ids)
        if len(set(self.instance_ids)) != n or len(set(self.target_ids)) != m:
            raise ValueError("ids must be unique")
        if not (len(self.rows) == len(self.cols) == len(self.values)):
            raise ValueError("triplet arrays must align")
        if len(self.rows):
            if self.rows.min() < 0 or self.rows.max() >= n:
                raise ValueError("instance index out of range")
            if self.cols.min() < 0 or self.cols.max() >= m:
                raise ValueError("target index out of range")
        cells = self.rows.astype(np.int64) * m + self.cols
        if len(np.unique(cells)) != len(cells):
            raise ValueError("duplicate (instance, target) cells")
        if self.instance_features is not None and len(self.instance_features) != n:
            raise ValueError("instance feature rows must match instance ids")
        if self.target_features is not None and len(self.target_features) != m:
            raise ValueError("target feature rows must match target ids")

    @property
    def n_instances(self) -> int:
        return len(self.instance_ids)

    @property
    def n_targets(self) -> int:
        return len(self.target_ids)

    @property
    def n_cells(self) -> int:
        return len(self.values)

    def score_type(self) -> str:
        """binary / real / nominal, from the observed values."""
        if self.n_cells == 0:
            raise ValueError("empty dataset has no score type")
        distinct = np.unique(self.values)
        if np.isin(distinct, (0.0, 1.0)).all():
            return "binary"
        if len(distinct) > REAL_DISTINCT_THRESHOLD:
            return "real"
        return "nominal"


def auto_answer(train: MtpDataset, test: MtpDataset | None = None) -> Answers:
    """Answer the routing questions from the data itself.

    With a test set, novelty (q1/q2) compares the ids in test triplets
    against the ids in training triplets. Without one, q1/q2 describe the
    intended deployment, which the data alone cannot settle; the default
    assumes generalization to novel instances exactly when instance features
    make that possible, and to known targets. Override explicitly for
    zero-shot or transductive uses. The hierarchy flavour of q4 is never
    auto-detected.
    """
    if train.n_cells == 0:
        raise ValueError("training data has no triplets")
    q3 = YES if train.instance_features is not None else NO
    q4 = YES if train.target_features is not None else NO
    q5 = YES if train.n_cells == train.n_instances * train.n_targets else NO
    if test is not None and test.n_cells > 0:
        train_inst = {train.instance_ids[i] for i in np.unique(train.rows)}
        train_tgt = {train.target_ids[j] for j in np.unique(train.cols)}
        test_inst = {test.instance_ids[i] for i in np.unique(test.rows)}
        test_tgt = {test.target_ids[j] for j in np.unique(test.cols)}
        q1 = YES if test_inst - train_inst else NO
        q2 = YES if test_tgt - train_tgt else NO
    else:
        q1, q2 = q3, NO
    return Answers(q1=q1, q2=q2, q3=q3, q4=q4, q5=q5, q6=train.score_type())


# ----------------------------------------------------------------------
# splits
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint train/validation/test membership over a dataset's triplets.

    Settings B/C/D first partition ids, then assign whole rows/columns.
    Setting D keeps only test-instance x test-target cells for testing and
    discards mixed pairs (their regime matches neither fold). Validation is
    always a uniform sample of the remaining training cells, mirroring how
    the inner early-stopping split is drawn in practice.
    """

    setting: ValidationSetting
    seed: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    discarded_idx: np.ndarray
    test_instances: tuple[str, ...] = ()
    test_targets: tuple[str, ...] = ()


def _round_count(total: int, fraction: float) -> int:
    return min(max(int(math.floor(total * fraction + 0.5)), 1), total - 1)


def split(d: MtpDataset, setting: ValidationSetting,
          test_fraction: float = 0.2, val_fraction: float = 0.2,
          seed: int = 0) -> SplitPlan:
    """Carve test and validation folds according to the regime.

    Raises ValueError when any fold would come out empty.
    """
    if not (0 < test_fraction < 1 and 0 < val_fraction < 1):
        raise ValueError("fractions must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    k = d.n_cells
    all_idx = np.arange(k)
    discarded = np.array([], dtype=int)
    test_instances: tuple[str, ...] = ()
    test_targets: tuple[str, ...] = ()

    if setting == ValidationSetting.A:
        perm = rng.permutation(k)
        n_test = _round_count(k, test_fraction)
        test_idx = perm[:n_test]
        rest = perm[n_test:]
    else:
        inst_is_test = np.zeros(d.n_instances, dtype=bool)
        tgt_is_test = np.zeros(d.n_targets, dtype=bool)
        if setting in (ValidationSetting.B, ValidationSetting.D):
            n_test_inst = _round_count(d.n_instances, test_fraction)
            chosen = rng.permutation(d.n_instances)[:n_test_inst]
            inst_is_test[chosen] = True
            test_instances = tuple(sorted(d.instance_ids[i] for i in chosen))
        if setting in (ValidationSetting.C, ValidationSetting.D):
            n_test_tgt = _round_count(d.n_targets, test_fraction)
            chosen = rng.permutation(d.n_targets)[:n_test_tgt]
            tgt_is_test[chosen] = True
            test_targets = tuple(sorted(d.target_ids[j] for j in chosen))
        row_test = inst_is_test[d.rows]
        col_test = tgt_is_test[d.cols]
        if setting == ValidationSetting.B:
            test_mask = row_test
        elif setting == ValidationSetting.C:
            test_mask = col_test
        else:
            test_mask = row_test & col_test
            discarded = all_idx[row_test ^ col_test]
        test_idx = all_idx[test_mask]
        keep = ~test_mask
        if setting == ValidationSetting.D:
            keep &= ~(row_test ^ col_test)
        rest = all_idx[keep]
        rest = rest[rng.permutation(len(rest))]

    if len(test_idx) == 0 or len(rest) < 2:
        raise ValueError("split leaves an empty fold")
    n_val = _round_count(len(rest), val_fraction)
    val_idx = rest[:n_val]
    train_idx = rest[n_val:]
    return SplitPlan(
        setting=setting, seed=seed,
        train_idx=np.sort(train_idx), val_idx=np.sort(val_idx),
        test_idx=np.sort(test_idx), discarded_idx=np.sort(discarded),
        test_instances=test_instances, test_targets=test_targets,
    )


def take(d: MtpDataset, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Triplet arrays (rows, cols, values) for one fold of a plan."""
    return d.rows[idx], d.cols[idx], d.values[idx]


def restrict(d: MtpDataset, idx: np.ndarray) -> MtpDataset:
    """Standalone dataset holding one fold, with ids narrowed to those that
    actually occur (the shape a user-supplied file of that fold would have)."""
    rows, cols, values = take(d, idx)
    inst_keep = np.unique(rows)
    tgt_keep = np.unique(cols)
    inst_map = {old: new for new, old in enumerate(inst_keep)}
    tgt_map = {old: new for new, old in enumerate(tgt_keep)}
    return MtpDataset(
        instance_ids=tuple(d.instance_ids[i] for i in inst_keep),
        target_ids=tuple(d.target_ids[j] for j in tgt_keep),
        rows=np.array([inst_map[r] for r in rows], dtype=int),
        cols=np.array([tgt_map[c] for c in cols], dtype=int),
        values=values.copy(),
        instance_features=None if d.instance_features is None
        else d.instance_features[inst_keep],
        target_features=None if d.target_features is None
        else d.target_features[tgt_keep],
    )
