"""Surrogate models over encoded configurations.

Two families back the model-based tuners: a bootstrap ensemble of regression
trees (mean/std predictions feeding expected improvement) and a pair of kernel
density estimates over the good and bad halves of the observations (density
ratio proposals). Both consume unit-cube encodings produced by
:mod:`mtptune.space`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

SIGMA_FLOOR = 1e-8          # ensemble std is floored here
EI_DEGENERATE_SIGMA = 1e-12  # below this EI collapses to max(o_min - mu, 0)
BANDWIDTH_FLOOR = 1e-3
CATEGORICAL_UNIFORM_WEIGHT = 0.1
DEFAULT_KDE_CANDIDATES = 64


class InsufficientData(ValueError):
    """Not enough observations to fit the requested model."""


@dataclass(frozen=True)
class Observation:
    """One completed evaluation: encoded config, fidelity, validation loss."""

    x: np.ndarray
    budget: int
    loss: float

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ValueError("budget must be a positive integer")
        if not math.isfinite(self.loss):
            raise ValueError("loss must be finite")


# ----------------------------------------------------------------------
# random forest of axis-aligned regression trees
# ----------------------------------------------------------------------


@dataclass
class _Node:
    value: float
    feature: int = -1           # -1 marks a leaf
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None


@dataclass
class RegressionTree:
    root: _Node
    bootstrap_idx: np.ndarray
    seed: int

    def predict(self, x: np.ndarray) -> float:
        node = self.root
        while node.feature >= 0:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.value


@dataclass
class RfSurrogate:
    trees: list[RegressionTree]
    n_trees: int
    min_leaf_size: int


def _best_split(X: np.ndarray, y: np.ndarray, dims: np.ndarray,
                min_leaf: int) -> tuple[int, float] | None:
    """Lowest within-child sum of squared errors over candidate midpoints."""
    n = len(y)
    best: tuple[float, int, float] | None = None
    for dim in dims:
        order = np.argsort(X[:, dim], kind="stable")
        xs = X[order, dim]
        ys = y[order]
        c1 = np.cumsum(ys)
        c2 = np.cumsum(ys * ys)
        # split after position k-1 (left gets k points); both sides >= min_leaf
        for k in range(min_leaf, n - min_leaf + 1):
            if xs[k - 1] >= xs[k]:
                continue  # no threshold separates equal coordinates
            sse_left = c2[k - 1] - c1[k - 1] ** 2 / k
            sr1 = c1[-1] - c1[k - 1]
            sse_right = (c2[-1] - c2[k - 1]) - sr1 ** 2 / (n - k)
            sse = sse_left + sse_right
            if best is None or sse < best[0] - 1e-15:
                best = (sse, int(dim), float((xs[k - 1] + xs[k]) / 2))
    if best is None:
        return None
    return best[1], best[2]


def _grow(X: np.ndarray, y: np.ndarray, min_leaf: int,
          rng: np.random.Generator) -> _Node:
    n, d = X.shape
    node = _Node(value=float(np.mean(y)))
    if n < 2 * min_leaf or np.all(y == y[0]):
        return node
    n_dims = max(1, math.ceil(d / 3))
    dims = rng.choice(d, size=n_dims, replace=False)
    split = _best_split(X, y, dims, min_leaf)
    if split is None:
        return node
    dim, threshold = split
    mask = X[:, dim] <= threshold
    node.feature = dim
    node.threshold = threshold
    node.left = _grow(X[mask], y[mask], min_leaf, rng)
    node.right = _grow(X[~mask], y[~mask], min_leaf, rng)
    return node


def rf_fit(observations: Sequence[Observation], n_trees: int = 10,
           min_leaf_size: int = 1,
           rng: np.random.Generator | None = None) -> RfSurrogate:
    """Fit a bootstrap ensemble of regression trees.

    Each tree trains on an independent bootstrap resample. Split dimensions
    are drawn from a random subset of ceil(d/3) coordinates; thresholds sit at
    midpoints between adjacent sorted values; leaves predict the mean loss.
    """
    if len(observations) < 2:
        raise InsufficientData("random forest needs at least 2 observations")
    rng = rng if rng is not None else np.random.default_rng(0)
    X = np.stack([np.asarray(o.x, dtype=float) for o in observations])
    if X.ndim != 2:
        raise ValueError("observations must share one encoding dimension")
    y = np.array([o.loss for o in observations], dtype=float)
    n = len(y)
    seeds = rng.integers(0, 2 ** 63 - 1, size=n_trees)
    trees = []
    for seed in seeds:
        tree_rng = np.random.default_rng(int(seed))
        idx = tree_rng.integers(0, n, size=n)
        root = _grow(X[idx], y[idx], min_leaf_size, tree_rng)
        trees.append(RegressionTree(root=root, bootstrap_idx=idx, seed=int(seed)))
    return RfSurrogate(trees=trees, n_trees=n_trees, min_leaf_size=min_leaf_size)


def rf_predict(surrogate: RfSurrogate, x: np.ndarray) -> tuple[float, float]:
    """Ensemble mean and population std at ``x``. The std never drops below
    ``SIGMA_FLOOR`` so downstream acquisition stays well-defined."""
    preds = np.array([t.predict(np.asarray(x, dtype=float)) for t in surrogate.trees])
    return float(preds.mean()), float(max(preds.std(), SIGMA_FLOOR))


# ----------------------------------------------------------------------
# expected improvement
# ----------------------------------------------------------------------


def _norm_cdf(u: float) -> float:
    return 0.5 * (1.0 + math.erf(u / math.sqrt(2.0)))


def _norm_pdf(u: float) -> float:
    return math.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)


def expected_improvement(mu: float, sigma: float, o_min: float) -> float:
    """E[max(o_min - Z, 0)] for Z ~ Normal(mu, sigma).

    Computed as sigma * (u * cdf(u) + pdf(u)) with u = (o_min - mu) / sigma;
    degenerate sigma collapses to the deterministic improvement.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma < EI_DEGENERATE_SIGMA:
        return max(o_min - mu, 0.0)
    u = (o_min - mu) / sigma
    return sigma * (u * _norm_cdf(u) + _norm_pdf(u))


def ei_propose(surrogate: RfSurrogate, observations: Sequence[Observation],
               rng: np.random.Generator,
               sample_encoded: Callable[[], np.ndarray],
               n_random: int = 1000, n_best: int = 5, n_local: int = 20,
               local_std: float = 0.05) -> np.ndarray:
    """Candidate-pool argmax of expected improvement.

    The pool is ``n_random`` fresh encodings plus ``n_local`` Gaussian
    perturbations (per-coordinate std ``local_std``, clipped to the cube)
    around each of the ``n_best`` lowest-loss observations. Ties keep the
    first candidate.
    """
    if not observations:
        raise InsufficientData("need observations to define the incumbent")
    o_min = min(o.loss for o in observations)
    pool = [sample_encoded() for _ in range(n_random)]
    ranked = sorted(range(len(observations)),
                    key=lambda i: (observations[i].loss, i))
    for i in ranked[:n_best]:
        center = np.asarray(observations[i].x, dtype=float)
        noise = rng.normal(0.0, local_std, size=(n_local, center.size))
        pool.extend(np.clip(center + row, 0.0, 1.0) for row in noise)
    best_x = pool[0]
    best_ei = -math.inf
    for x in pool:
        mu, sigma = rf_predict(surrogate, x)
        ei = expected_improvement(mu, sigma, o_min)
        if ei > best_ei:
            best_ei = ei
            best_x = x
    return np.asarray(best_x, dtype=float)


# ----------------------------------------------------------------------
# good/bad kernel density pair
# ----------------------------------------------------------------------


@dataclass
class Kde:
    """Product-kernel density over unit-cube points.

    Numeric coordinates use Gaussian kernels with per-dimension bandwidths
    from Scott's rule (floored). Coordinates flagged categorical (one-hot
    blocks) mix each Gaussian kernel with a uniform component so unseen
    corners keep non-zero density.
    """

    points: np.ndarray
    bandwidths: np.ndarray
    categorical_mask: np.ndarray

    def log_density(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        z = (x[None, :] - self.points) / self.bandwidths[None, :]
        log_k = -0.5 * z * z - np.log(self.bandwidths[None, :]) \
            - 0.5 * math.log(2 * math.pi)
        if self.categorical_mask.any():
            w = CATEGORICAL_UNIFORM_WEIGHT
            cat = self.categorical_mask
            # uniform density on [0, 1] is 1, so the mixture is (1-w)K + w
            mixed = np.logaddexp(math.log1p(-w) + log_k[:, cat], math.log(w))
            log_k = log_k.copy()
            log_k[:, cat] = mixed
        per_kernel = log_k.sum(axis=1)
        m = per_kernel.max()
        return float(m + math.log(np.exp(per_kernel - m).mean()))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        k = int(rng.integers(len(self.points)))
        center = self.points[k]
        draw = center + self.bandwidths * rng.normal(size=center.size)
        if self.categorical_mask.any():
            uniform = rng.random(center.size)
            take_uniform = rng.random(center.size) < CATEGORICAL_UNIFORM_WEIGHT
            take_uniform &= self.categorical_mask
            draw = np.where(take_uniform, uniform, draw)
        return np.clip(draw, 0.0, 1.0)


@dataclass
class KdePair:
    good: Kde
    bad: Kde
    gamma: float


def _fit_kde(points: np.ndarray, categorical_mask: np.ndarray) -> Kde:
    k, d = points.shape
    scott = k ** (-1.0 / (d + 4))
    bw = np.maximum(points.std(axis=0) * scott, BANDWIDTH_FLOOR)
    return Kde(points=points, bandwidths=bw, categorical_mask=categorical_mask)


def kde_fit_pair(observations: Sequence[Observation], gamma: float = 0.15,
                 min_points: int | None = None,
                 categorical_mask: np.ndarray | None = None) -> KdePair:
    """Split observations into a good and a bad density by loss.

    The good model covers the best max(ceil(gamma * N), d + 1) points, the bad
    model the rest. ``min_points`` defaults to d + 2, the smallest count that
    leaves the bad side non-empty.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if not observations:
        raise InsufficientData("no observations")
    X = np.stack([np.asarray(o.x, dtype=float) for o in observations])
    n, d = X.shape
    if min_points is None:
        min_points = d + 2
    if n < min_points:
        raise InsufficientData(f"{n} observations < min_points {min_points}")
    if categorical_mask is None:
        categorical_mask = np.zeros(d, dtype=bool)
    categorical_mask = np.asarray(categorical_mask, dtype=bool)
    order = sorted(range(n), key=lambda i: (observations[i].loss, i))
    n_good = max(math.ceil(gamma * n), d + 1)
    good_idx = order[:n_good]
    bad_idx = order[n_good:]
    if not bad_idx:
        raise InsufficientData("all observations fall in the good split")
    return KdePair(
        good=_fit_kde(X[good_idx], categorical_mask),
        bad=_fit_kde(X[bad_idx], categorical_mask),
        gamma=gamma,
    )


def kde_propose(pair: KdePair, rng: np.random.Generator,
                n_candidates: int = DEFAULT_KDE_CANDIDATES) -> np.ndarray:
    """Best of ``n_candidates`` draws from the good density, ranked by the
    good/bad log-density ratio. Ties keep the first draw."""
    if n_candidates < 1:
        raise ValueError("need at least one candidate")
    best_x: np.ndarray | None = None
    best_ratio = -math.inf
    for _ in range(n_candidates):
        x = pair.good.sample(rng)
        ratio = pair.good.log_density(x) - pair.bad.log_density(x)
        if ratio > best_ratio:
            best_ratio = ratio
            best_x = x
    assert best_x is not None
    return best_x
