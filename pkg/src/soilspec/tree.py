"""CART regression trees shared by all tree ensembles.

Trees are stored as flat node arrays; a node with ``feature == -1`` is a
leaf. Samples with ``x[feature] <= threshold`` descend to the left child.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .rng import make_state, next_below, next_float

SPLIT_MODES = ("exhaustive", "random_threshold")


@numba.njit(cache=True)
def _build(X, y, idx, max_depth, min_samples_split, max_features, random_split, state):
    n_total = idx.size
    d = X.shape[1]
    cap = 2 * n_total + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    count = np.zeros(cap, np.int64)
    impurity = np.zeros(cap)

    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    fmin = np.empty(d)
    fmax = np.empty(d)
    cand = np.empty(d, np.int64)
    vals = np.empty(n_total)
    ys = np.empty(n_total)

    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n_total
    st_depth[0] = 0
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]
        m = end - start

        total = 0.0
        for i in range(start, end):
            total += y[idx[i]]
        mean = total / m
        sse = 0.0
        csum = 0.0
        pure = True
        y0 = y[idx[start]]
        for i in range(start, end):
            r = y[idx[i]] - mean
            sse += r * r
            csum += r
            if y[idx[i]] != y0:
                pure = False
        value[node] = mean
        count[node] = m
        impurity[node] = sse / m
        if pure or m < min_samples_split or (max_depth >= 0 and depth >= max_depth):
            continue

        n_cand = 0
        for f in range(d):
            lo = np.inf
            hi = -np.inf
            for i in range(start, end):
                v = X[idx[i], f]
                if v < lo:
                    lo = v
                if v > hi:
                    hi = v
            fmin[f] = lo
            fmax[f] = hi
            if hi > lo:
                cand[n_cand] = f
                n_cand += 1
        if n_cand == 0:
            continue
        k = min(max_features, n_cand)
        if k < n_cand:
            for i in range(k):
                j = i + next_below(state, n_cand - i)
                tmp = cand[i]
                cand[i] = cand[j]
                cand[j] = tmp
            chosen = np.sort(cand[:k])
        else:
            chosen = cand[:k].copy()

        # candidates must beat the incumbent by more than rounding noise so that
        # equal partitions reached through different features tie reliably
        tie_tol = 1e-12 * sse
        best = np.inf
        best_f = -1
        best_t = 0.0
        for c in range(k):
            f = chosen[c]
            if random_split:
                t = fmin[f] + next_float(state) * (fmax[f] - fmin[f])
                if t >= fmax[f]:
                    t = fmin[f]
                nl = 0
                sl = 0.0
                ql = 0.0
                for i in range(start, end):
                    if X[idx[i], f] <= t:
                        r = y[idx[i]] - mean
                        nl += 1
                        sl += r
                        ql += r * r
                nr = m - nl
                sr = csum - sl
                child = (ql - sl * sl / nl) + ((sse - ql) - sr * sr / nr)
                if child < best - tie_tol:
                    best = child
                    best_f = f
                    best_t = t
            else:
                for i in range(m):
                    vals[i] = X[idx[start + i], f]
                    ys[i] = y[idx[start + i]] - mean
                order = np.argsort(vals[:m], kind="mergesort")
                sl = 0.0
                ql = 0.0
                for p in range(m - 1):
                    r = ys[order[p]]
                    sl += r
                    ql += r * r
                    a = vals[order[p]]
                    b = vals[order[p + 1]]
                    if a < b:
                        nl = p + 1
                        nr = m - nl
                        sr = csum - sl
                        child = (ql - sl * sl / nl) + ((sse - ql) - sr * sr / nr)
                        if child < best - tie_tol:
                            best = child
                            best_f = f
                            t = 0.5 * (a + b)
                            if t >= b:
                                t = a
                            best_t = t

        # partition idx[start:end] so that left-going samples come first
        i = start
        j = end - 1
        while i <= j:
            if X[idx[i], best_f] <= best_t:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        mid = i

        feature[node] = best_f
        threshold[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        n_nodes += 2
        st_node[top] = right[node]
        st_start[top] = mid
        st_end[top] = end
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = left[node]
        st_start[top] = start
        st_end[top] = mid
        st_depth[top] = depth + 1
        top += 1

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], count[:n_nodes], impurity[:n_nodes])


@numba.njit(cache=True)
def _apply(feature, threshold, left, right, X):
    out = np.empty(X.shape[0], np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@numba.njit(cache=True)
def _bootstrap(n, state):
    out = np.empty(n, np.int64)
    for i in range(n):
        out[i] = next_below(state, n)
    return out


def bootstrap_indices(n, state):
    return _bootstrap(n, state)


@dataclass(frozen=True)
class TreeParams:
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    split_mode: str = "exhaustive"
    max_features: Optional[int] = None

    def __post_init__(self):
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.split_mode not in SPLIT_MODES:
            raise ValueError(f"split_mode must be one of {SPLIT_MODES}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0 or None")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError("max_features must be >= 1")


def resolve_max_features(spec, d):
    """Number of candidate features per split for a hyperparameter value.

    ``"all"``/``None`` -> d, ``"third"`` -> ceil(d/3), ``"sqrt"`` -> ceil(sqrt d),
    a float in (0, 1] -> ceil(spec*d), an int -> itself clipped to d.
    """
    if spec is None or spec == "all":
        return d
    if spec == "third":
        return max(1, math.ceil(d / 3))
    if spec == "sqrt":
        return max(1, math.ceil(math.sqrt(d)))
    if isinstance(spec, float):
        if not 0.0 < spec <= 1.0:
            raise ValueError("fractional max_features must lie in (0, 1]")
        return max(1, math.ceil(spec * d))
    if isinstance(spec, int) and spec >= 1:
        return min(spec, d)
    raise ValueError(f"invalid max_features {spec!r}")


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    impurity: np.ndarray
    n_features: int

    @property
    def n_nodes(self):
        return self.feature.size

    @property
    def is_leaf(self):
        return self.feature < 0

    def depth(self):
        depth = np.zeros(self.n_nodes, np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def apply(self, X):
        """Index of the leaf reached by every row."""
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} feature columns, got {np.shape(X)[-1]}")
        return _apply(self.feature, self.threshold, self.left, self.right, X)

    def predict(self, X):
        return self.value[self.apply(X)]

    def split_gains(self):
        """Decrease in summed squared error at every internal node (0 at leaves)."""
        sse = self.impurity * self.n_samples
        gains = np.zeros(self.n_nodes)
        internal = ~self.is_leaf
        gains[internal] = (sse[internal] - sse[self.left[internal]] - sse[self.right[internal]])
        return np.maximum(gains, 0.0)

    def feature_importances(self):
        """Impurity-decrease importances normalised to sum 1 (all zero for a stump)."""
        imp = np.zeros(self.n_features)
        internal = ~self.is_leaf
        np.add.at(imp, self.feature[internal], self.split_gains()[internal] / self.n_samples[0])
        total = imp.sum()
        return imp / total if total > 0 else imp

    def to_dict(self):
        return {
            "n_features": self.n_features,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
            "impurity": self.impurity.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        ints = {k: np.array(data[k], dtype=np.int64) for k in ("feature", "left", "right", "n_samples")}
        floats = {k: np.array(data[k], dtype=float) for k in ("threshold", "value", "impurity")}
        return cls(n_features=int(data["n_features"]), **ints, **floats)


def fit_cart(X, y, params=TreeParams(), seed=0, sample_indices=None, state=None):
    """Grow a regression tree minimising within-node squared error.

    ``sample_indices`` selects (possibly repeated) training rows, e.g. a
    bootstrap resample. Ties between equally good splits go to the lowest
    feature index, then the lowest threshold.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X must be (n, d) with one target per row")
    if X.shape[0] < 1:
        raise ValueError("cannot fit a tree on zero samples")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite training data")
    d = X.shape[1]
    idx = np.arange(X.shape[0]) if sample_indices is None else np.array(sample_indices, dtype=np.int64)
    if state is None:
        state = make_state(seed)
    max_features = d if params.max_features is None else min(params.max_features, d)
    arrays = _build(X, y, idx, -1 if params.max_depth is None else params.max_depth,
                    params.min_samples_split, max_features,
                    params.split_mode == "random_threshold", state)
    return Tree(*(a.copy() for a in arrays), n_features=d)
