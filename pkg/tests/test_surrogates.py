"""Forest surrogate, expected improvement, and density-ratio proposals."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtptune.surrogates import (BANDWIDTH_FLOOR, SIGMA_FLOOR, InsufficientData,
                                Observation, ei_propose, expected_improvement,
                                kde_fit_pair, kde_propose, rf_fit, rf_predict)


def obs(xs, losses, budget=1):
    return [Observation(x=np.asarray(x, dtype=float), budget=budget, loss=l)
            for x, l in zip(xs, losses)]


class TestExpectedImprovement:
    def test_at_incumbent_mean_equals_sigma_over_root_two_pi(self):
        # u = 0 collapses the closed form to sigma * pdf(0)
        val = expected_improvement(mu=0.0, sigma=0.1, o_min=0.0)
        assert val == pytest.approx(0.1 / math.sqrt(2 * math.pi), abs=1e-15)
        assert val == pytest.approx(0.039894228040143274, abs=1e-12)

    def test_one_sigma_below_incumbent(self):
        # u = 1: sigma * (cdf(1) + pdf(1))
        val = expected_improvement(mu=0.4, sigma=0.1, o_min=0.5)
        assert val == pytest.approx(0.1083315470587686, abs=1e-12)

    def test_degenerate_sigma_uses_deterministic_improvement(self):
        assert expected_improvement(0.3, 0.0, 0.5) == pytest.approx(0.2)
        assert expected_improvement(0.7, 1e-13, 0.5) == 0.0

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            expected_improvement(0.0, -1.0, 0.0)

    @pytest.mark.parametrize("mu,sigma,o_min", [
        (0.0, 0.1, 0.0), (0.4, 0.1, 0.5), (0.8, 0.3, 0.5), (0.2, 0.05, 0.5),
    ])
    def test_against_monte_carlo(self, mu, sigma, o_min):
        rng = np.random.default_rng(123)
        z = rng.normal(mu, sigma, size=10_000_000)
        mc = np.maximum(o_min - z, 0.0).mean()
        assert expected_improvement(mu, sigma, o_min) == pytest.approx(mc, abs=1e-3)

    @given(st.floats(-2, 2), st.floats(0.01, 1.0), st.floats(-2, 2))
    @settings(max_examples=200, deadline=None)
    def test_nonnegative_and_bounded_below_by_improvement(self, mu, sigma, o_min):
        val = expected_improvement(mu, sigma, o_min)
        assert val >= 0.0
        assert val >= max(o_min - mu, 0.0) - 1e-12  # Jensen direction


class TestForest:
    def test_needs_two_observations(self):
        with pytest.raises(InsufficientData):
            rf_fit(obs([[0.5]], [1.0]))

    def test_single_tree_interpolates_its_bootstrap_sample(self):
        # 1-d distinct inputs, min_leaf 1: every bootstrap point sits in a
        # pure leaf, so the tree reproduces its training targets exactly
        xs = [[i / 9] for i in range(10)]
        ys = [math.sin(3 * i) for i in range(10)]
        surrogate = rf_fit(obs(xs, ys), n_trees=1, min_leaf_size=1,
                           rng=np.random.default_rng(5))
        tree = surrogate.trees[0]
        for i in set(tree.bootstrap_idx.tolist()):
            assert tree.predict(np.asarray(xs[i])) == pytest.approx(ys[i])

    def test_learns_smooth_function(self):
        rng = np.random.default_rng(0)
        X = rng.random((300, 2))
        y = (X ** 2).sum(axis=1)
        surrogate = rf_fit(obs(X, y), n_trees=10, min_leaf_size=1,
                           rng=np.random.default_rng(1))
        Xt = rng.random((200, 2))
        preds = np.array([rf_predict(surrogate, x)[0] for x in Xt])
        mse = np.mean((preds - (Xt ** 2).sum(axis=1)) ** 2)
        assert mse < 0.05

    def test_std_floor_on_constant_targets(self):
        X = np.linspace(0, 1, 20)[:, None]
        surrogate = rf_fit(obs(X, np.full(20, 2.5)), rng=np.random.default_rng(2))
        mu, sigma = rf_predict(surrogate, np.array([0.3]))
        assert mu == pytest.approx(2.5)
        assert sigma == SIGMA_FLOOR

    def test_fit_deterministic_given_rng(self):
        rng_x = np.random.default_rng(9)
        X = rng_x.random((40, 3))
        y = X.sum(axis=1)
        a = rf_fit(obs(X, y), rng=np.random.default_rng(77))
        b = rf_fit(obs(X, y), rng=np.random.default_rng(77))
        probe = np.array([0.2, 0.8, 0.5])
        assert rf_predict(a, probe) == rf_predict(b, probe)


class TestEiPropose:
    def _surrogate_and_obs(self):
        rng = np.random.default_rng(4)
        X = rng.random((30, 2))
        y = ((X - 0.5) ** 2).sum(axis=1)
        observations = obs(X, y)
        surrogate = rf_fit(observations, rng=np.random.default_rng(8))
        return surrogate, observations

    def test_returns_point_in_unit_cube(self):
        surrogate, observations = self._surrogate_and_obs()
        rng = np.random.default_rng(1)
        x = ei_propose(surrogate, observations, rng,
                       sample_encoded=lambda: rng.random(2))
        assert x.shape == (2,)
        assert (x >= 0).all() and (x <= 1).all()

    def test_deterministic_given_rng(self):
        surrogate, observations = self._surrogate_and_obs()

        def propose():
            rng = np.random.default_rng(42)
            return ei_propose(surrogate, observations, rng,
                              sample_encoded=lambda: rng.random(2))

        assert np.array_equal(propose(), propose())

    def test_needs_observations(self):
        surrogate, observations = self._surrogate_and_obs()
        with pytest.raises(InsufficientData):
            ei_propose(surrogate, [], np.random.default_rng(0),
                       sample_encoded=lambda: np.zeros(2))

    def test_no_considered_candidate_beats_the_proposal(self):
        # replay the random portion of the pool with the same generator seed;
        # the argmax must dominate every candidate it actually scored
        surrogate, observations = self._surrogate_and_obs()
        rng = np.random.default_rng(6)
        x = ei_propose(surrogate, observations, rng,
                       sample_encoded=lambda: rng.random(2), n_random=200)
        o_min = min(o.loss for o in observations)
        ei_star = expected_improvement(*rf_predict(surrogate, x), o_min)
        replay = np.random.default_rng(6)
        for _ in range(200):
            ei = expected_improvement(*rf_predict(surrogate, replay.random(2)), o_min)
            assert ei <= ei_star + 1e-12


class TestKde:
    def test_good_split_size(self):
        # n=10, d=2: max(ceil(0.15 * 10), 3) = 3 best points go to the good kde
        X = np.linspace(0, 1, 10)[:, None].repeat(2, axis=1)
        losses = [5, 1, 4, 0, 3, 9, 2, 8, 7, 6]
        pair = kde_fit_pair(obs(X, losses), gamma=0.15)
        assert len(pair.good.points) == 3
        assert len(pair.bad.points) == 7
        kept = {tuple(p) for p in pair.good.points}
        best = sorted(range(10), key=lambda i: losses[i])[:3]
        assert kept == {tuple(X[i]) for i in best}

    def test_tie_break_prefers_earlier_observation(self):
        X = np.arange(8, dtype=float)[:, None] / 7
        losses = [1.0] * 8
        pair = kde_fit_pair(obs(X, losses), gamma=0.15)
        # d=1: n_good = max(ceil(1.2), 2) = 2, the two earliest on ties
        assert {float(p[0]) for p in pair.good.points} == {0.0, 1 / 7}

    def test_insufficient_data(self):
        X = np.zeros((3, 2))
        X[:, 0] = [0.1, 0.5, 0.9]
        with pytest.raises(InsufficientData):
            kde_fit_pair(obs(X, [1.0, 2.0, 3.0]))  # needs d + 2 = 4

    def test_scott_bandwidths_with_floor(self):
        X = np.array([[0.0, 0.5], [0.5, 0.5], [1.0, 0.5], [0.2, 0.5],
                      [0.9, 0.5], [0.4, 0.5], [0.6, 0.5], [0.3, 0.5]])
        pair = kde_fit_pair(obs(X, list(range(8))), gamma=0.5)
        good = pair.good
        k, d = good.points.shape
        scott = k ** (-1.0 / (d + 4))
        assert good.bandwidths[0] == pytest.approx(
            max(good.points[:, 0].std() * scott, BANDWIDTH_FLOOR))
        # the second coordinate is constant, so only the floor remains
        assert good.bandwidths[1] == BANDWIDTH_FLOOR

    def test_sampling_stays_in_cube(self):
        rng_x = np.random.default_rng(3)
        X = rng_x.random((12, 3))
        pair = kde_fit_pair(obs(X, rng_x.random(12)), gamma=0.3)
        rng = np.random.default_rng(11)
        for _ in range(300):
            x = pair.good.sample(rng)
            assert (x >= 0).all() and (x <= 1).all()

    def test_categorical_coords_keep_unseen_corner_reachable(self):
        # every training point has coordinate 0 at a one-hot position; the
        # uniform mixture still gives the opposite corner finite density
        mask = np.array([True, False])
        X = np.zeros((6, 2))
        X[:, 1] = np.linspace(0.2, 0.8, 6)
        pair = kde_fit_pair(obs(X, list(range(6))), gamma=0.4,
                            categorical_mask=mask)
        far = np.array([1.0, 0.5])
        assert math.isfinite(pair.good.log_density(far))
        no_mask = kde_fit_pair(obs(X, list(range(6))), gamma=0.4)
        assert pair.good.log_density(far) > no_mask.good.log_density(far)

    def test_propose_prefers_good_region(self):
        rng_x = np.random.default_rng(21)
        good_pts = rng_x.normal(0.2, 0.03, size=(10, 2)).clip(0, 1)
        bad_pts = rng_x.normal(0.8, 0.03, size=(30, 2)).clip(0, 1)
        X = np.vstack([good_pts, bad_pts])
        losses = [0.0] * 10 + [1.0] * 30
        pair = kde_fit_pair(obs(X, losses), gamma=0.25)
        x = kde_propose(pair, np.random.default_rng(2))
        assert np.linalg.norm(x - 0.2) < np.linalg.norm(x - 0.8)

    def test_propose_deterministic(self):
        rng_x = np.random.default_rng(13)
        X = rng_x.random((15, 2))
        pair = kde_fit_pair(obs(X, rng_x.random(15)), gamma=0.3)
        a = kde_propose(pair, np.random.default_rng(5))
        b = kde_propose(pair, np.random.default_rng(5))
        assert np.array_equal(a, b)

    @given(st.integers(4, 60))
    @settings(max_examples=60, deadline=None)
    def test_split_sizes_always_partition(self, n):
        X = np.linspace(0, 1, n)[:, None]
        losses = list(range(n))
        pair = kde_fit_pair(obs(X, losses), gamma=0.15, min_points=3)
        n_good = len(pair.good.points)
        assert n_good == max(math.ceil(0.15 * n), 2)
        assert n_good + len(pair.bad.points) == n


class TestObservation:
    def test_rejects_nonfinite_loss(self):
        with pytest.raises(ValueError):
            Observation(x=np.zeros(2), budget=1, loss=math.nan)

    def test_rejects_nonpositive_budget(self):
        with pytest.raises(ValueError):
            Observation(x=np.zeros(2), budget=0, loss=1.0)
