"""CART regression trees on the state features with linear models in the leaves."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

LEAF = -1


def fit_leaf_linear(Zc, Eps, ridge: float = 1e-4) -> np.ndarray:
    """Ridge least squares ``Eps ~ Theta' [1, zc]`` with an unpenalised intercept.

    Returns ``Theta`` of shape ``(N+1, outputs)``.
    """
    Zc = np.atleast_2d(np.asarray(Zc, dtype=float))
    Eps = np.asarray(Eps, dtype=float)
    if Eps.ndim == 1:
        Eps = Eps[:, None]
    if len(Zc) == 0:
        raise ValueError("leaf has no samples")
    A = np.hstack([np.ones((len(Zc), 1)), Zc])
    M = A.T @ A
    M[1:, 1:] += ridge * np.eye(Zc.shape[1])
    rhs = A.T @ Eps
    try:
        return cho_solve(cho_factor(M), rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(M, rhs, rcond=None)[0]


def _best_split(X, Y, min_leaf: int, features):
    """Best (feature, threshold, sse) over ``features``; ``None`` if no valid split.

    Minimises the summed within-child squared error of the (already scaled)
    labels ``Y``. Thresholds are midpoints between consecutive distinct values;
    ties go to the lowest feature index, then the lowest threshold.
    """
    n = len(X)
    if n < 2 * min_leaf:
        return None
    Xf = X[:, features]
    order = np.argsort(Xf, axis=0, kind="stable")
    xs = np.take_along_axis(Xf, order, axis=0)
    Yc = Y - Y.mean(axis=0)
    cs = np.cumsum(Yc[order], axis=0)  # (n, F, r)
    nl = np.arange(1, n, dtype=float)[:, None]
    SL = cs[:-1]
    SR = cs[-1][None] - SL
    score = (SL ** 2).sum(-1) / nl + (SR ** 2).sum(-1) / (n - nl)
    valid = xs[1:] > xs[:-1]
    valid[: min_leaf - 1] = False
    if min_leaf > 1:
        valid[n - min_leaf:] = False
    if not valid.any():
        return None
    score = np.where(valid, score, -np.inf)
    flat = score.T.ravel()  # feature-major, thresholds ascending
    best = int(np.argmax(flat))
    fi, pos = divmod(best, n - 1)
    sse_parent = float((Yc ** 2).sum())
    sse = sse_parent - float(flat[best])
    if sse >= sse_parent * (1 - 1e-12):
        return None
    thr = 0.5 * (xs[pos, fi] + xs[pos + 1, fi])
    return int(features[fi]), float(thr), sse


@dataclass
class RegressionTree:
    """Flat-array binary tree. Internal nodes have ``leaf[i] == -1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf: np.ndarray
    thetas: np.ndarray  # (n_leaves, N+1, r)
    leaf_n: np.ndarray
    leaf_mean: np.ndarray  # (n_leaves, r)

    @property
    def n_leaves(self) -> int:
        return len(self.thetas)

    @property
    def depth(self) -> int:
        def rec(i):
            return 0 if self.leaf[i] != LEAF else 1 + max(rec(self.left[i]), rec(self.right[i]))
        return rec(0)

    def apply(self, X) -> np.ndarray:
        """Leaf index for every row of ``X``."""
        X = np.atleast_2d(X)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            internal = self.leaf[node] == LEAF
            if not internal.any():
                return self.leaf[node]
            f = self.feature[node]
            go_left = X[rows, np.where(internal, f, 0)] <= self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(internal, nxt, node)

    def predict(self, Zn, Zc) -> np.ndarray:
        leaves = self.apply(Zn)
        A = np.hstack([np.ones((len(leaves), 1)), np.atleast_2d(Zc)])
        return np.einsum("kp,kpr->kr", A, self.thetas[leaves])

    def predict_mean(self, Zn) -> np.ndarray:
        return self.leaf_mean[self.apply(Zn)]

    def to_dict(self, i: int = 0) -> dict:
        if self.leaf[i] != LEAF:
            j = self.leaf[i]
            return {"theta": self.thetas[j].tolist(), "n": int(self.leaf_n[j]),
                    "mean": self.leaf_mean[j].tolist()}
        return {"f": int(self.feature[i]), "t": float(self.threshold[i]),
                "l": self.to_dict(int(self.left[i])), "r": self.to_dict(int(self.right[i]))}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        b = _Builder()

        def rec(node):
            if "theta" in node:
                return b.add_leaf(np.asarray(node["theta"], float), int(node["n"]),
                                  np.asarray(node["mean"], float))
            i = b.add_internal(int(node["f"]), float(node["t"]))
            b.left[i] = rec(node["l"])
            b.right[i] = rec(node["r"])
            return i

        rec(d)
        return b.finish()


class _Builder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right, self.leaf = [], [], [], [], []
        self.thetas, self.leaf_n, self.leaf_mean = [], [], []

    def _node(self, f, t, leaf):
        self.feature.append(f)
        self.threshold.append(t)
        self.left.append(-1)
        self.right.append(-1)
        self.leaf.append(leaf)
        return len(self.feature) - 1

    def add_internal(self, f, t):
        return self._node(f, t, LEAF)

    def add_leaf(self, theta, n, mean):
        self.thetas.append(theta)
        self.leaf_n.append(n)
        self.leaf_mean.append(mean)
        i = self._node(0, 0.0, len(self.thetas) - 1)
        self.left[i] = self.right[i] = i
        return i

    def finish(self) -> RegressionTree:
        return RegressionTree(np.array(self.feature, dtype=np.int64), np.array(self.threshold, float),
                              np.array(self.left, dtype=np.int64), np.array(self.right, dtype=np.int64),
                              np.array(self.leaf, dtype=np.int64), np.array(self.thetas, float),
                              np.array(self.leaf_n, dtype=np.int64), np.array(self.leaf_mean, float))


def grow_tree(Zn, Zc, Eps, *, max_depth: int, min_leaf: int, ridge: float,
              feature_fraction: float = 1.0, rng=None, label_scale=None) -> RegressionTree:
    """Grow one tree on array data; features are used exactly as given."""
    Zn = np.asarray(Zn, dtype=float)
    Zc = np.asarray(Zc, dtype=float)
    Eps = np.asarray(Eps, dtype=float)
    if len(Zn) == 0:
        raise ValueError("cannot grow a tree on an empty sample set")
    if label_scale is None:
        label_scale = Eps.std(axis=0)
    label_scale = np.where(np.asarray(label_scale) > 0, label_scale, 1.0)
    Y = Eps / label_scale
    n_feat = Zn.shape[1]
    k_feat = max(1, int(round(feature_fraction * n_feat)))
    if rng is None:
        rng = np.random.default_rng(0)
    b = _Builder()

    def leaf(idx):
        theta = fit_leaf_linear(Zc[idx], Eps[idx], ridge)
        return b.add_leaf(theta, len(idx), Eps[idx].mean(axis=0))

    def rec(idx, depth):
        if depth >= max_depth or len(idx) < 2 * min_leaf or np.all(np.ptp(Y[idx], axis=0) == 0):
            return leaf(idx)
        if k_feat < n_feat:
            feats = np.sort(rng.choice(n_feat, size=k_feat, replace=False))
        else:
            feats = np.arange(n_feat)
        split = _best_split(Zn[idx], Y[idx], min_leaf, feats)
        if split is None:
            return leaf(idx)
        f, t, _ = split
        mask = Zn[idx, f] <= t
        i = b.add_internal(f, t)
        b.left[i] = rec(idx[mask], depth + 1)
        b.right[i] = rec(idx[~mask], depth + 1)
        return i

    rec(np.arange(len(Zn)), 0)
    return b.finish()


def fit_tree(samples, config, rng=None) -> RegressionTree:
    """CART tree on raw ``zn`` of ``samples`` (a ResidualDataset or sample list)."""
    from .samples import ResidualDataset

    ds = samples if isinstance(samples, ResidualDataset) else ResidualDataset.from_samples(list(samples))
    if len(ds) == 0:
        raise ValueError("cannot fit a tree on an empty sample set")
    if len(ds) < config.min_leaf:
        raise ValueError(f"need at least min_leaf={config.min_leaf} samples, got {len(ds)}")
    return grow_tree(ds.Zn, ds.Zc, ds.Eps, max_depth=config.max_depth, min_leaf=config.min_leaf,
                     ridge=config.ridge, feature_fraction=config.feature_fraction, rng=rng)
