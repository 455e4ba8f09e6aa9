"""From a routed dataset to a tunable training objective.

``assemble_problem`` answers the routing questions, picks the problem and
validation settings, checks that the required side information exists, carves
the folds, and fixes the loss, the report metric, and the search space.
``MtpTrainingObjective`` then maps (configuration, budget) to a trained
two-branch network and its validation loss.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import mtp
from .engine import TrialResult
from .metrics import MetricSpec, NoPositives, NoValidTargets, evaluate_metric
from .network import (BranchSpec, Checkpoint, FeasibilityError, HeadSpec,
                      TrainConfig, TwoBranchModel, build, predict_matrix, train)
from .space import ConfigSpace, Configuration, ParamSpec

DEFAULT_PATIENCE = 5

Triplets = tuple[np.ndarray, np.ndarray, np.ndarray]


class NoMatchingSetting(ValueError):
    """The routing answers match no known problem setting."""

    def __init__(self, answers: mtp.Answers):
        self.answers = answers
        super().__init__("the answers match no known problem setting")


def default_space(tune_layers: bool) -> ConfigSpace:
    """Search space over the training hyperparameters.

    Depth and width only become tunable when some branch actually consumes
    feature vectors; a one-hot branch is a single lookup table regardless.
    """
    params = [
        ParamSpec("learning_rate", "float", lo=1e-4, hi=1e-1, log=True),
        ParamSpec("batch_size", "categorical", choices=(256, 512, 1024)),
        ParamSpec("embedding_dim", "int", lo=8, hi=256, log=True),
    ]
    if tune_layers:
        params.append(ParamSpec("n_layers", "int", lo=1, hi=3))
        params.append(ParamSpec("layer_width", "int", lo=32, hi=512, log=True))
    return ConfigSpace(params)


def config_seed(config: Configuration, base_seed: int) -> int:
    """Deterministic per-configuration seed, stable across processes."""
    blob = json.dumps({"base": base_seed, "config": config},
                      sort_keys=True).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


@dataclass(frozen=True)
class AssembledProblem:
    """Everything the tuner needs: folds, inputs, loss, metric, space."""

    name: str
    setting: mtp.MtpSetting
    validation: mtp.ValidationSetting
    answers: mtp.Answers
    loss: str
    metric: MetricSpec
    n_instances: int
    n_targets: int
    inst_inputs: np.ndarray | None  # feature rows by index, None for one-hot
    tgt_inputs: np.ndarray | None
    train_triplets: Triplets
    val_triplets: Triplets
    test_triplets: Triplets
    train_target_means: dict[int, float]
    space: ConfigSpace

    def describe(self) -> str:
        side = lambda x, n: "one-hot" if x is None else f"{x.shape[1]} features"
        return (f"{self.setting.value} (validation {self.validation.value}), "
                f"loss {self.loss}, metric {self.metric.label}, "
                f"{self.n_instances} x {self.n_targets} grid, "
                f"instances {side(self.inst_inputs, self.n_instances)}, "
                f"targets {side(self.tgt_inputs, self.n_targets)}")


def _round_count(total: int, fraction: float) -> int:
    return min(max(int(math.floor(total * fraction + 0.5)), 1), total - 1)


def _default_metric(setting: mtp.MtpSetting, loss: str) -> MetricSpec:
    if loss == "bce":
        pairwise = (mtp.MtpSetting.DYADIC_PREDICTION,
                    mtp.MtpSetting.ZERO_SHOT_LEARNING,
                    mtp.MtpSetting.COLD_START_COLLABORATIVE_FILTERING)
        return MetricSpec("aupr", "micro" if setting in pairwise else "macro")
    if setting == mtp.MtpSetting.MULTIVARIATE_REGRESSION:
        return MetricSpec("rrmse", "macro")
    return MetricSpec("rmse", "micro")


def _merge_test(train: mtp.MtpDataset, test: mtp.MtpDataset):
    """Union vocabulary over both folds; returns remapped triplets and the
    stacked feature matrices."""
    inst_ids = list(train.instance_ids)
    inst_pos = {i: k for k, i in enumerate(inst_ids)}
    new_inst = [i for i in test.instance_ids if i not in inst_pos]
    for i in new_inst:
        inst_pos[i] = len(inst_ids)
        inst_ids.append(i)
    tgt_ids = list(train.target_ids)
    tgt_pos = {j: k for k, j in enumerate(tgt_ids)}
    new_tgt = [j for j in test.target_ids if j not in tgt_pos]
    for j in new_tgt:
        tgt_pos[j] = len(tgt_ids)
        tgt_ids.append(j)

    def stack(train_feat, test_feat, new_ids, test_id_pos, side):
        if train_feat is None:
            return None
        if not new_ids:
            return train_feat
        if test_feat is None:
            raise FeasibilityError(
                f"test set introduces new {side} ids but carries no "
                f"{side} features")
        extra = test_feat[[test_id_pos[i] for i in new_ids]]
        return np.vstack([train_feat, extra])

    inst_feat = stack(train.instance_features, test.instance_features, new_inst,
                      {i: k for k, i in enumerate(test.instance_ids)}, "instance")
    tgt_feat = stack(train.target_features, test.target_features, new_tgt,
                     {j: k for k, j in enumerate(test.target_ids)}, "target")
    test_rows = np.array([inst_pos[test.instance_ids[r]] for r in test.rows], dtype=int)
    test_cols = np.array([tgt_pos[test.target_ids[c]] for c in test.cols], dtype=int)
    return (len(inst_ids), len(tgt_ids), inst_feat, tgt_feat,
            (test_rows, test_cols, test.values.copy()))


def assemble_problem(bundle, answers: mtp.Answers | None = None,
                     setting: mtp.MtpSetting | None = None,
                     metric: MetricSpec | None = None, seed: int = 0,
                     test_fraction: float = 0.2,
                     val_fraction: float = 0.2) -> AssembledProblem:
    """Route a dataset bundle and carve it into a ready-to-tune problem.

    With no explicit test set the regime's split carves one out of the
    training data. Validation is always a uniform sample of the remaining
    training cells. Settings whose test fold holds novel instances (targets)
    require instance (target) features, since a one-hot branch cannot embed
    an unseen id.
    """
    train = bundle.train
    if answers is None:
        answers = mtp.auto_answer(train, bundle.test)
    if setting is None:
        matches = mtp.infer_setting(answers)
        if not matches:
            raise NoMatchingSetting(answers)
        setting = matches[0]
        validation = mtp.validation_setting(answers.q1, answers.q2)
    else:
        validation = mtp.setting_validation(setting)

    novel_inst = validation in (mtp.ValidationSetting.B, mtp.ValidationSetting.D)
    novel_tgt = validation in (mtp.ValidationSetting.C, mtp.ValidationSetting.D)
    if novel_inst and train.instance_features is None:
        raise FeasibilityError(
            f"validation setting {validation.value} holds out novel instances, "
            "which needs instance features")
    if novel_tgt and train.target_features is None:
        raise FeasibilityError(
            f"validation setting {validation.value} holds out novel targets, "
            "which needs target features")

    if bundle.test is None:
        plan = mtp.split(train, validation, test_fraction=test_fraction,
                         val_fraction=val_fraction, seed=seed)
        n_inst, n_tgt = train.n_instances, train.n_targets
        inst_feat, tgt_feat = train.instance_features, train.target_features
        train_trip = mtp.take(train, plan.train_idx)
        val_trip = mtp.take(train, plan.val_idx)
        test_trip = mtp.take(train, plan.test_idx)
    else:
        n_inst, n_tgt, inst_feat, tgt_feat, test_trip = _merge_test(
            train, bundle.test)
        rng = np.random.default_rng(seed)
        perm = rng.permutation(train.n_cells)
        n_val = _round_count(train.n_cells, val_fraction)
        val_idx = np.sort(perm[:n_val])
        train_idx = np.sort(perm[n_val:])
        train_trip = mtp.take(train, train_idx)
        val_trip = mtp.take(train, val_idx)

    q6 = answers.q6 if answers.q6 != "any" else train.score_type()
    loss = "bce" if q6 == "binary" else "mse"
    if metric is None:
        metric = _default_metric(setting, loss)

    means: dict[int, float] = {}
    rows, cols, values = train_trip
    for j in np.unique(cols):
        means[int(j)] = float(values[cols == j].mean())

    return AssembledProblem(
        name=bundle.name, setting=setting, validation=validation,
        answers=answers, loss=loss, metric=metric,
        n_instances=n_inst, n_targets=n_tgt,
        inst_inputs=inst_feat, tgt_inputs=tgt_feat,
        train_triplets=train_trip, val_triplets=val_trip,
        test_triplets=test_trip, train_target_means=means,
        space=default_space(inst_feat is not None or tgt_feat is not None),
    )


def mean_predictor_rmse(problem: AssembledProblem) -> float:
    """Test RMSE of the constant global-train-mean predictor."""
    mean = float(problem.train_triplets[2].mean())
    y = problem.test_triplets[2]
    return float(np.sqrt(np.mean((y - mean) ** 2)))


class MtpTrainingObjective:
    """Maps (configuration, epoch budget) to validation loss and test metrics.

    Each configuration trains under a seed hashed from its own values, so a
    resumed trial continues the exact run a fresh longer trial would have
    been, and identically seeded tuners reproduce byte-identical ledgers.
    """

    def __init__(self, problem: AssembledProblem, head: str = "dot",
                 patience: int = DEFAULT_PATIENCE, base_seed: int = 0):
        self.problem = problem
        self.head = HeadSpec(kind=head, widths=(32,) if head == "mlp" else ())
        self.patience = patience
        self.base_seed = base_seed

    def _branch(self, config: Configuration, one_hot: bool) -> BranchSpec:
        emb = int(config["embedding_dim"])
        if one_hot:
            return BranchSpec(n_layers=1, embedding_dim=emb)
        return BranchSpec(n_layers=int(config.get("n_layers", 1)),
                          width=int(config.get("layer_width", 64)),
                          embedding_dim=emb)

    def build_model(self, config: Configuration) -> TwoBranchModel:
        p = self.problem
        return build(
            n_instances=p.n_instances, n_targets=p.n_targets,
            instance_feature_dim=None if p.inst_inputs is None
            else p.inst_inputs.shape[1],
            target_feature_dim=None if p.tgt_inputs is None
            else p.tgt_inputs.shape[1],
            inst_spec=self._branch(config, p.inst_inputs is None),
            tgt_spec=self._branch(config, p.tgt_inputs is None),
            head_spec=self.head, loss=p.loss,
            seed=config_seed(config, self.base_seed),
        )

    def _train(self, config: Configuration, budget: int,
               resume_from: Checkpoint | None):
        p = self.problem
        model = self.build_model(config)
        cfg = TrainConfig(
            learning_rate=float(config["learning_rate"]),
            batch_size=int(config["batch_size"]),
            loss=p.loss, patience=self.patience,
            seed=config_seed(config, self.base_seed),
        )
        result = train(model, p.inst_inputs, p.tgt_inputs,
                       p.train_triplets, p.val_triplets, cfg,
                       budget_epochs=int(budget), resume_from=resume_from)
        return model, result

    def test_metrics(self, model: TwoBranchModel,
                     ckpt: Checkpoint) -> dict[str, float]:
        p = self.problem
        rows, cols, y = p.test_triplets
        pred = predict_matrix(model, p.inst_inputs, p.tgt_inputs,
                              (rows, cols), params=ckpt.best_params)
        try:
            value = evaluate_metric(p.metric, y, pred, cols,
                                    train_target_means=p.train_target_means)
        except (NoPositives, NoValidTargets):
            return {}  # the fold cannot support the metric
        return {p.metric.label: float(value)}

    def evaluate(self, config: Configuration, budget: int,
                 resume_from: Checkpoint | None = None) -> TrialResult:
        model, result = self._train(config, budget, resume_from)
        return TrialResult(
            val_loss=result.checkpoint.best_val_loss,
            test_metrics=self.test_metrics(model, result.checkpoint),
            checkpoint=result.checkpoint,
        )

    def probe_best_epoch(self, config: Configuration, epoch_cap: int) -> int:
        """Best validation epoch of a fresh run to the cap (for calibration)."""
        _, result = self._train(config, epoch_cap, None)
        return max(result.checkpoint.best_epoch, 1)
