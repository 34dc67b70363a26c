"""Random forest of leaf-linear trees with coefficient averaging."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .samples import FeatureWindow, ResidualDataset
from .trees import LEAF, RegressionTree, grow_tree


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 20
    max_depth: int = 6
    min_leaf: int = 34
    feature_fraction: float = 0.34
    bootstrap: bool = True
    ridge: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 0 or self.min_leaf < 1:
            raise ValueError("need n_trees >= 1, max_depth >= 0, min_leaf >= 1")
        if not (0 < self.feature_fraction <= 1):
            raise ValueError("feature_fraction must lie in (0, 1]")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")

    def check_window(self, N: int) -> None:
        if self.min_leaf < N + 2:
            raise ValueError(f"min_leaf={self.min_leaf} must be at least N+2={N + 2}")


class ResidualForest:
    """Immutable fitted forest.

    Trees split on standardized ``zn``; every leaf holds ``Theta`` over
    ``[1, zc]``. Routing for all trees is done on stacked node tables.
    """

    def __init__(self, trees, config: ForestConfig, mean, scale):
        self.trees = tuple(trees)
        self.config = config
        self.mean = np.asarray(mean, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self._stack()

    def _stack(self):
        T = len(self.trees)
        n_nodes = max(len(t.feature) for t in self.trees)
        n_leaves = max(t.n_leaves for t in self.trees)
        p, r = self.trees[0].thetas.shape[1:]
        self._feat = np.zeros((T, n_nodes), dtype=np.int64)
        self._thr = np.zeros((T, n_nodes))
        self._left = np.zeros((T, n_nodes), dtype=np.int64)
        self._right = np.zeros((T, n_nodes), dtype=np.int64)
        self._leaf = np.zeros((T, n_nodes), dtype=np.int64)
        self._thetas = np.zeros((T, n_leaves, p, r))
        self._means = np.zeros((T, n_leaves, r))
        for i, t in enumerate(self.trees):
            k = len(t.feature)
            self._feat[i, :k] = t.feature
            self._thr[i, :k] = t.threshold
            self._left[i, :k] = t.left
            self._right[i, :k] = t.right
            self._leaf[i, :k] = t.leaf
            self._thetas[i, :t.n_leaves] = t.thetas
            self._means[i, :t.n_leaves] = t.leaf_mean
        self._depth = max(t.depth for t in self.trees)
        for a in (self._feat, self._thr, self._left, self._right, self._leaf, self._thetas, self._means):
            a.flags.writeable = False

    @property
    def N(self) -> int:
        return self.trees[0].thetas.shape[1] - 1

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def standardize(self, Zn) -> np.ndarray:
        return (np.atleast_2d(np.asarray(Zn, dtype=float)) - self.mean) / self.scale

    def route(self, Zn, return_visits: bool = False):
        """Leaf index per (tree, query) for raw ``Zn`` of shape ``(k, 4N)``."""
        X = self.standardize(Zn)
        k = len(X)
        T = self.n_trees
        node = np.zeros((T, k), dtype=np.int64)
        t_idx = np.arange(T)[:, None]
        q_idx = np.arange(k)[None, :]
        visits = 0
        for _ in range(self._depth):
            internal = self._leaf[t_idx, node] == LEAF
            visits += int(internal.sum())
            f = self._feat[t_idx, node]
            go_left = X[q_idx, f] <= self._thr[t_idx, node]
            node = np.where(go_left, self._left[t_idx, node], self._right[t_idx, node])
        leaves = self._leaf[t_idx, node]
        if return_visits:
            return leaves, visits
        return leaves

    def coefficients(self, leaves) -> np.ndarray:
        """Leaf coefficients for a ``(T, k)`` array of leaf indices."""
        return self._thetas[np.arange(self.n_trees)[:, None], leaves]

    def leaf_thetas(self, Zn) -> np.ndarray:
        """Per-tree leaf coefficients, shape ``(T, k, N+1, 4)``."""
        return self.coefficients(self.route(Zn))

    def predict_leaf_batch(self, Zn) -> np.ndarray:
        """Averaged coefficients for each query, shape ``(k, N+1, 4)``."""
        return self.leaf_thetas(Zn).mean(axis=0)

    def predict(self, Zn, Zc) -> np.ndarray:
        theta = self.predict_leaf_batch(Zn)
        A = np.hstack([np.ones((len(theta), 1)), np.atleast_2d(Zc)])
        return np.einsum("kp,kpr->kr", A, theta)

    def predict_mean(self, Zn) -> np.ndarray:
        """Leaf-mean prediction (no linear part), averaged over trees."""
        leaves = self.route(Zn)
        return self._means[np.arange(self.n_trees)[:, None], leaves].mean(axis=0)

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "standardization": {"mean": self.mean.tolist(), "scale": self.scale.tolist()},
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResidualForest":
        cfg = ForestConfig(**d["config"])
        st = d["standardization"]
        trees = [RegressionTree.from_dict(t) for t in d["trees"]]
        return cls(trees, cfg, st["mean"], st["scale"])

    @classmethod
    def zeros(cls, N: int, n_trees: int = 1) -> "ResidualForest":
        """Forest whose every coefficient is zero (degenerate residue)."""
        tree = RegressionTree(np.zeros(1, np.int64), np.zeros(1), np.zeros(1, np.int64),
                              np.zeros(1, np.int64), np.zeros(1, np.int64),
                              np.zeros((1, N + 1, 4)), np.zeros(1, np.int64), np.zeros((1, 4)))
        cfg = ForestConfig(n_trees=n_trees, min_leaf=N + 2)
        return cls([tree] * n_trees, cfg, np.zeros(4 * N), np.ones(4 * N))


def fit_forest(data, config: ForestConfig) -> ResidualForest:
    ds = data if isinstance(data, ResidualDataset) else ResidualDataset.from_samples(list(data))
    config.check_window(ds.N)
    if len(ds) < config.min_leaf:
        raise ValueError(f"need at least min_leaf={config.min_leaf} samples, got {len(ds)}")
    mean = ds.Zn.mean(axis=0)
    scale = ds.Zn.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    X = (ds.Zn - mean) / scale
    label_scale = ds.Eps.std(axis=0)

    streams = np.random.SeedSequence(config.seed).spawn(config.n_trees)
    trees = []
    for ss in streams:
        rng = np.random.default_rng(ss)
        if config.bootstrap:
            idx = np.sort(rng.integers(0, len(ds), size=len(ds)))
        else:
            idx = np.arange(len(ds))
        trees.append(grow_tree(X[idx], ds.Zc[idx], ds.Eps[idx], max_depth=config.max_depth,
                               min_leaf=config.min_leaf, ridge=config.ridge,
                               feature_fraction=config.feature_fraction, rng=rng,
                               label_scale=label_scale))
    return ResidualForest(trees, config, mean, scale)


def predict_leaf(forest: ResidualForest, zn) -> np.ndarray:
    """Tree-averaged ``Theta`` (N+1, 4) for a single ``zn``."""
    return forest.predict_leaf_batch(np.asarray(zn, dtype=float).reshape(1, -1))[0]


def predict_residue(forest: ResidualForest, window: FeatureWindow) -> np.ndarray:
    theta = predict_leaf(forest, window.zn)
    return theta.T @ np.concatenate([[1.0], window.zc])


def save_forest(forest: ResidualForest, path) -> None:
    with open(path, "w") as fh:
        json.dump(forest.to_dict(), fh, separators=(",", ":"))
        fh.write("\n")


def load_forest(path) -> ResidualForest:
    with open(path) as fh:
        return ResidualForest.from_dict(json.load(fh))
