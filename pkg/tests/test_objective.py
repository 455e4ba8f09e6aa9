"""Problem assembly, per-config seeding, and the training objective."""

import numpy as np
import pytest

from mtptune import mtp
from mtptune.dataio import (DatasetBundle, synth_matrix_completion,
                            synth_multilabel)
from mtptune.metrics import MetricSpec
from mtptune.network import FeasibilityError
from mtptune.objective import (AssembledProblem, MtpTrainingObjective,
                               NoMatchingSetting, assemble_problem,
                               config_seed, default_space,
                               mean_predictor_rmse)


class TestDefaultSpace:
    def test_fixed_architecture_without_features(self):
        names = [p.name for p in default_space(False).params]
        assert names == ["learning_rate", "batch_size", "embedding_dim"]

    def test_depth_and_width_become_tunable(self):
        names = [p.name for p in default_space(True).params]
        assert names == ["learning_rate", "batch_size", "embedding_dim",
                         "n_layers", "layer_width"]

    def test_bounds(self):
        space = default_space(True)
        by_name = {p.name: p for p in space.params}
        assert by_name["learning_rate"].log
        assert (by_name["learning_rate"].lo,
                by_name["learning_rate"].hi) == (1e-4, 1e-1)
        assert by_name["batch_size"].choices == (256, 512, 1024)
        assert (by_name["n_layers"].lo, by_name["n_layers"].hi) == (1, 3)


class TestConfigSeed:
    CONFIG = {"learning_rate": 0.01, "batch_size": 256, "embedding_dim": 16}

    def test_stable_and_key_order_free(self):
        a = config_seed(self.CONFIG, 0)
        b = config_seed(dict(reversed(list(self.CONFIG.items()))), 0)
        assert a == b
        assert 0 <= a < 2 ** 64

    def test_sensitive_to_values_and_base(self):
        a = config_seed(self.CONFIG, 0)
        assert config_seed({**self.CONFIG, "embedding_dim": 17}, 0) != a
        assert config_seed(self.CONFIG, 1) != a


class TestAssembleProblem:
    def test_featureless_real_matrix(self):
        bundle = synth_matrix_completion(12, 8, 2, 0.1, observed_fraction=0.7, seed=0)
        p = assemble_problem(bundle)
        assert p.setting == mtp.MtpSetting.MATRIX_COMPLETION
        assert p.validation == mtp.ValidationSetting.A
        assert p.loss == "mse"
        assert p.metric.label == "micro_rmse"
        assert p.inst_inputs is None and p.tgt_inputs is None
        assert len(p.space.params) == 3

    def test_binary_with_instance_features(self):
        bundle = synth_multilabel(40, 5, 4, seed=0)
        p = assemble_problem(bundle)
        assert p.setting == mtp.MtpSetting.MULTILABEL_CLASSIFICATION
        assert p.validation == mtp.ValidationSetting.B
        assert p.loss == "bce"
        assert p.metric.label == "macro_aupr"
        assert p.inst_inputs.shape == (40, 4)
        assert len(p.space.params) == 5

    def test_folds_partition_the_cells(self):
        bundle = synth_matrix_completion(10, 10, 2, 0.1, observed_fraction=0.7, seed=1)
        p = assemble_problem(bundle)
        sizes = [len(t[2]) for t in
                 (p.train_triplets, p.val_triplets, p.test_triplets)]
        assert sum(sizes) == 70
        assert all(s > 0 for s in sizes)

    def test_train_means_come_from_train_fold_only(self):
        bundle = synth_matrix_completion(10, 6, 2, 0.1, observed_fraction=0.7, seed=2)
        p = assemble_problem(bundle)
        rows, cols, values = p.train_triplets
        j = int(cols[0])
        assert p.train_target_means[j] == pytest.approx(values[cols == j].mean())

    def test_metric_override(self):
        bundle = synth_matrix_completion(10, 6, 2, 0.1, observed_fraction=0.7, seed=0)
        p = assemble_problem(bundle, metric=MetricSpec("auroc", "micro"))
        assert p.metric.label == "micro_auroc"

    def test_explicit_setting_fixes_regime(self):
        import dataclasses
        mc = synth_matrix_completion(40, 5, 2, 0.1, seed=0).train
        feat = np.random.default_rng(0).normal(size=(40, 3))
        real = dataclasses.replace(mc, instance_features=feat)
        bundle = DatasetBundle(name="reals", train=real)
        p = assemble_problem(bundle,
                             setting=mtp.MtpSetting.MULTIVARIATE_REGRESSION)
        assert p.validation == mtp.ValidationSetting.B
        assert p.loss == "mse"
        assert p.metric.label == "macro_rrmse"

    def test_novel_instances_require_instance_features(self):
        bundle = synth_matrix_completion(10, 6, 2, 0.1, seed=0)
        with pytest.raises(FeasibilityError, match="instance features"):
            assemble_problem(
                bundle, setting=mtp.MtpSetting.MULTILABEL_CLASSIFICATION)

    def test_novel_targets_require_target_features(self):
        bundle = synth_multilabel(40, 5, 4, seed=0)
        with pytest.raises(FeasibilityError, match="target features"):
            assemble_problem(bundle,
                             setting=mtp.MtpSetting.ZERO_SHOT_LEARNING)

    def test_unroutable_answers_raise(self):
        bundle = synth_matrix_completion(10, 6, 2, 0.1, seed=0)
        odd = mtp.Answers(q1=mtp.NO, q2=mtp.YES, q3=mtp.NO, q4=mtp.NO,
                          q5=mtp.NO, q6="real")
        with pytest.raises(NoMatchingSetting) as err:
            assemble_problem(bundle, answers=odd)
        assert err.value.answers == odd

    def test_split_seed_changes_folds(self):
        bundle = synth_matrix_completion(10, 10, 2, 0.1, observed_fraction=0.7, seed=0)
        a = assemble_problem(bundle, seed=0)
        b = assemble_problem(bundle, seed=1)
        assert not np.array_equal(a.test_triplets[2], b.test_triplets[2])
        c = assemble_problem(bundle, seed=0)
        assert np.array_equal(a.test_triplets[2], c.test_triplets[2])


def tiny_dataset(values, inst_feat=None, n=2, m=2):
    rows, cols = np.divmod(np.arange(n * m), m)
    return mtp.MtpDataset(
        instance_ids=tuple(f"i{i}" for i in range(n)),
        target_ids=tuple(f"t{j}" for j in range(m)),
        rows=rows, cols=cols, values=np.asarray(values, dtype=float),
        instance_features=inst_feat,
    )


class TestExplicitTestSet:
    def test_union_vocabulary_and_feature_stack(self):
        train = tiny_dataset([1.0, 0.0, 0.0, 1.0],
                             inst_feat=np.array([[1.0], [2.0]]))
        test = mtp.MtpDataset(
            instance_ids=("i9",), target_ids=("t0",),
            rows=np.array([0]), cols=np.array([0]),
            values=np.array([1.0]),
            instance_features=np.array([[9.0]]),
        )
        bundle = DatasetBundle(name="d", train=train, test=test)
        p = assemble_problem(bundle, val_fraction=0.25)
        assert p.n_instances == 3
        assert p.inst_inputs.shape == (3, 1)
        assert p.inst_inputs[2, 0] == 9.0
        # the novel instance maps to the appended row index
        assert p.test_triplets[0].tolist() == [2]
        # validation is carved out of train cells only
        assert len(p.val_triplets[2]) == 1
        assert len(p.train_triplets[2]) == 3

    def test_novel_test_ids_without_features_rejected(self):
        train = tiny_dataset([1.0, 0.0, 0.0, 1.0],
                             inst_feat=np.array([[1.0], [2.0]]))
        test = mtp.MtpDataset(
            instance_ids=("i9",), target_ids=("t0",),
            rows=np.array([0]), cols=np.array([0]), values=np.array([1.0]),
        )
        bundle = DatasetBundle(name="d", train=train, test=test)
        with pytest.raises(FeasibilityError, match="instance"):
            assemble_problem(bundle)


def small_problem(seed=0):
    return assemble_problem(
        synth_matrix_completion(12, 8, 2, 0.1, observed_fraction=0.7, seed=seed))


def a_config(space, seed=0):
    return space.sample(np.random.default_rng(seed))


class TestMeanPredictorBaseline:
    def test_hand_value(self):
        p = small_problem()
        base = AssembledProblem(
            name=p.name, setting=p.setting, validation=p.validation,
            answers=p.answers, loss=p.loss, metric=p.metric,
            n_instances=p.n_instances, n_targets=p.n_targets,
            inst_inputs=None, tgt_inputs=None,
            train_triplets=(np.array([0, 1]), np.array([0, 0]),
                            np.array([1.0, 3.0])),
            val_triplets=p.val_triplets,
            test_triplets=(np.array([0, 1]), np.array([0, 0]),
                           np.array([0.0, 4.0])),
            train_target_means={0: 2.0}, space=p.space,
        )
        # train mean 2 against test values 0 and 4
        assert mean_predictor_rmse(base) == pytest.approx(2.0)


class TestTrainingObjective:
    def test_evaluate_returns_finite_result(self):
        p = small_problem()
        obj = MtpTrainingObjective(p, base_seed=0)
        config = a_config(p.space)
        result = obj.evaluate(config, budget=3)
        assert np.isfinite(result.val_loss)
        assert set(result.test_metrics) == {"micro_rmse"}
        assert result.checkpoint.epoch <= 3

    def test_resume_continues_the_same_run(self):
        p = small_problem()
        obj = MtpTrainingObjective(p, base_seed=0)
        config = a_config(p.space, seed=1)
        short = obj.evaluate(config, budget=2)
        resumed = obj.evaluate(config, budget=5, resume_from=short.checkpoint)
        fresh = obj.evaluate(config, budget=5)
        assert resumed.val_loss == fresh.val_loss
        for k in fresh.checkpoint.params:
            assert np.array_equal(resumed.checkpoint.params[k],
                                  fresh.checkpoint.params[k])

    def test_base_seed_changes_training(self):
        p = small_problem()
        config = a_config(p.space, seed=2)
        a = MtpTrainingObjective(p, base_seed=0).evaluate(config, budget=2)
        b = MtpTrainingObjective(p, base_seed=1).evaluate(config, budget=2)
        assert a.val_loss != b.val_loss

    def test_mlp_head_trains(self):
        p = assemble_problem(synth_multilabel(30, 4, 3, seed=0))
        obj = MtpTrainingObjective(p, head="mlp", base_seed=0)
        result = obj.evaluate(a_config(p.space), budget=2)
        assert np.isfinite(result.val_loss)

    def test_probe_best_epoch_bounds(self):
        p = small_problem()
        obj = MtpTrainingObjective(p, base_seed=0)
        best = obj.probe_best_epoch(a_config(p.space), epoch_cap=4)
        assert 1 <= best <= 4

    def test_degenerate_test_fold_yields_no_metrics(self):
        p = assemble_problem(synth_multilabel(30, 4, 3, seed=0))
        flat = AssembledProblem(
            name=p.name, setting=p.setting, validation=p.validation,
            answers=p.answers, loss=p.loss, metric=p.metric,
            n_instances=p.n_instances, n_targets=p.n_targets,
            inst_inputs=p.inst_inputs, tgt_inputs=p.tgt_inputs,
            train_triplets=p.train_triplets, val_triplets=p.val_triplets,
            test_triplets=(p.test_triplets[0], p.test_triplets[1],
                           np.zeros_like(p.test_triplets[2])),
            train_target_means=p.train_target_means, space=p.space,
        )
        obj = MtpTrainingObjective(flat, base_seed=0)
        result = obj.evaluate(a_config(p.space), budget=1)
        assert result.test_metrics == {}
