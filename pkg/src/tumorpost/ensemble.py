"""From-scratch CART trees, bagged random forest and gradient-boosted trees.

Trees are stored as flat arrays (feature, threshold, children, leaf value)
so models serialize to human-diffable JSON and predict vectorized.  Split
search scans exact midpoints of sorted unique values; ties break toward the
lowest feature index then the lowest threshold, which makes training
bit-deterministic for a fixed seed.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod

_LEAF = -1


@dataclass
class ForestParams:
    n_trees: int = 350
    max_depth: int = 16
    min_samples_leaf: int = 10
    max_features: str = "sqrt"   # per-split feature subsample
    balanced_class_weights: bool = True


@dataclass
class GbdtParams:
    n_rounds: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 5


@dataclass
class Tree:
    """Flat-array binary tree; node 0 is the root."""

    feature: np.ndarray = field(repr=False)    # int32, _LEAF at leaves
    threshold: np.ndarray = field(repr=False)  # float64
    left: np.ndarray = field(repr=False)       # int32
    right: np.ndarray = field(repr=False)      # int32
    value: np.ndarray = field(repr=False)      # float64 leaf output

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] != _LEAF
        while active.any():
            idx = np.flatnonzero(active)
            f = self.feature[node[idx]]
            go_left = X[idx, f] < self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
            active[idx] = self.feature[node[idx]] != _LEAF
        return self.value[node]

    def depth(self):
        def _d(i):
            if self.feature[i] == _LEAF:
                return 0
            return 1 + max(_d(self.left[i]), _d(self.right[i]))
        return _d(0)


class _TreeBuilder:
    def __init__(self):
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []

    def add(self, feature=_LEAF, threshold=0.0, value=0.0):
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(_LEAF)
        self.right.append(_LEAF)
        self.value.append(value)
        return len(self.feature) - 1

    def build(self):
        return Tree(
            np.asarray(self.feature, dtype=np.int32),
            np.asarray(self.threshold, dtype=np.float64),
            np.asarray(self.left, dtype=np.int32),
            np.asarray(self.right, dtype=np.int32),
            np.asarray(self.value, dtype=np.float64),
        )


def _best_split_gini(X, y, w, idx, features, min_leaf):
    """Lowest weighted Gini split over the feature subset; returns
    (impurity_decrease, feature, threshold) or None."""
    yb = y[idx].astype(bool)
    wv = w[idx]
    w_tot = wv.sum()
    w1_tot = wv[yb].sum()
    p1 = w1_tot / w_tot
    parent_gini = 1.0 - p1 * p1 - (1.0 - p1) ** 2
    if parent_gini <= 0.0:
        return None
    n = idx.size
    best = None  # (impurity, feature, threshold)
    for f in features:
        v = X[idx, f]
        order = np.argsort(v, kind="stable")
        sv = v[order]
        sw = wv[order]
        sw1 = sw * yb[order]
        cw = np.cumsum(sw)
        cw1 = np.cumsum(sw1)
        # candidate cut after position i (0-based), both sides >= min_leaf rows
        cand = np.arange(min_leaf - 1, n - min_leaf)
        if cand.size == 0:
            continue
        cand = cand[sv[cand] < sv[cand + 1]]
        if cand.size == 0:
            continue
        wl = cw[cand]
        w1l = cw1[cand]
        wr = w_tot - wl
        w1r = w1_tot - w1l
        gini_l = 1.0 - (w1l / wl) ** 2 - ((wl - w1l) / wl) ** 2
        gini_r = 1.0 - (w1r / wr) ** 2 - ((wr - w1r) / wr) ** 2
        imp = (wl * gini_l + wr * gini_r) / w_tot
        k = int(np.argmin(imp))  # first minimum -> lowest threshold
        score = float(imp[k])
        thr = float((sv[cand[k]] + sv[cand[k] + 1]) / 2.0)
        if best is None or score < best[0] - 1e-15 or (
            abs(score - best[0]) <= 1e-15
            and (f < best[1] or (f == best[1] and thr < best[2]))
        ):
            best = (score, int(f), thr)
    if best is None:
        return None
    return (parent_gini - best[0], best[1], best[2])


@dataclass
class ForestModel:
    trees: list
    params: ForestParams
    n_features: int
    seed: int
    importances_raw: np.ndarray = field(repr=False)  # mean decrease impurity

    def predict_proba(self, X):
        return forest_predict_proba(self, X)


def _n_subset_features(d, mode):
    if mode == "sqrt":
        return max(1, int(np.sqrt(d)))
    if mode == "all":
        return d
    return max(1, min(int(mode), d))


def _grow_tree(X, y, w, gen, params, importances):
    n, d = X.shape
    boot = gen.integers(0, n, size=n)
    builder = _TreeBuilder()
    k_feat = _n_subset_features(d, params.max_features)
    w_root = w[boot].sum()

    def leaf_value(idx):
        wv = w[idx]
        return float(wv[y[idx].astype(bool)].sum() / wv.sum())

    def grow(idx, depth):
        node = builder.add(value=leaf_value(idx))
        if depth >= params.max_depth or idx.size < 2 * params.min_samples_leaf:
            return node
        features = np.sort(gen.choice(d, size=k_feat, replace=False))
        split = _best_split_gini(X, y, w, idx, features, params.min_samples_leaf)
        if split is None:
            return node
        decrease, f, thr = split
        go_left = X[idx, f] < thr
        importances[f] += decrease * w[idx].sum() / w_root
        left = grow(idx[go_left], depth + 1)
        right = grow(idx[~go_left], depth + 1)
        builder.feature[node] = f
        builder.threshold[node] = thr
        builder.left[node] = left
        builder.right[node] = right
        return node

    grow(boot, 0)
    return builder.build()


def train_forest(X, y, params: ForestParams = None, seed: int = 0) -> ForestModel:
    """Bootstrap-bagged CART forest with balanced class weights."""
    params = params or ForestParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2:
        raise ValueError("X must be 2D")
    classes, counts = np.unique(y, return_counts=True)
    if classes.size != 2 or not np.array_equal(classes, [0, 1]):
        raise ValueError("labels must contain both classes {0, 1}")
    n = X.shape[0]
    if n < 2 * params.min_samples_leaf:
        raise ValueError("too few rows for min_samples_leaf")
    if params.balanced_class_weights:
        cw = n / (2.0 * counts)
        w = cw[y]
    else:
        w = np.ones(n)
    trees = []
    importances = np.zeros(X.shape[1])
    for t in range(params.n_trees):
        gen = rngmod.stream(seed, "tree", t)
        tree_imp = np.zeros(X.shape[1])
        trees.append(_grow_tree(X, y, w, gen, params, tree_imp))
        importances += tree_imp
    importances /= params.n_trees
    return ForestModel(trees, params, X.shape[1], seed, importances)


def forest_predict_proba(model: ForestModel, X) -> np.ndarray:
    """Mean of per-tree leaf probabilities; one probability per row."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise ValueError(
            f"feature dimension {X.shape[1]} != trained {model.n_features}"
        )
    acc = np.zeros(X.shape[0])
    for tree in model.trees:
        acc += tree.predict(X)
    return acc / len(model.trees)


def forest_importance(model: ForestModel) -> np.ndarray:
    """Mean-decrease-impurity importances, normalized to sum 1."""
    total = model.importances_raw.sum()
    if total <= 0:
        return np.zeros_like(model.importances_raw)
    return model.importances_raw / total


# ---------------------------------------------------------------------------
# gradient boosting with Newton leaf values on logistic loss
# ---------------------------------------------------------------------------


@dataclass
class GbdtModel:
    trees: list
    params: GbdtParams
    n_features: int
    base_score: float   # prior log-odds
    gain_raw: np.ndarray = field(repr=False)
    freq_raw: np.ndarray = field(repr=False)

    def decision_function(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            out += self.params.learning_rate * tree.predict(X)
        return out

    def predict_proba(self, X):
        return 1.0 / (1.0 + np.exp(-self.decision_function(X)))


def _best_split_newton(X, g, h, idx, min_leaf):
    """Maximal gain split: gain = GL^2/HL + GR^2/HR - G^2/H."""
    n = idx.size
    if n < 2 * min_leaf:
        return None
    G = g[idx].sum()
    H = h[idx].sum()
    parent = G * G / max(H, 1e-12)
    best = None
    for f in range(X.shape[1]):
        v = X[idx, f]
        order = np.argsort(v, kind="stable")
        sv = v[order]
        cg = np.cumsum(g[idx][order])
        ch = np.cumsum(h[idx][order])
        cand = np.arange(min_leaf - 1, n - min_leaf)
        if cand.size == 0:
            continue
        cand = cand[sv[cand] < sv[cand + 1]]
        if cand.size == 0:
            continue
        gl = cg[cand]
        hl = np.maximum(ch[cand], 1e-12)
        gr = G - cg[cand]
        hr = np.maximum(H - ch[cand], 1e-12)
        gain = gl * gl / hl + gr * gr / hr - parent
        k = int(np.argmax(gain))
        score = float(gain[k])
        thr = float((sv[cand[k]] + sv[cand[k] + 1]) / 2.0)
        if score <= 1e-12:
            continue
        if best is None or score > best[0] + 1e-15 or (
            abs(score - best[0]) <= 1e-15
            and (f < best[1] or (f == best[1] and thr < best[2]))
        ):
            best = (score, f, thr)
    return best


def _grow_newton_tree(X, g, h, params, gain_acc, freq_acc):
    builder = _TreeBuilder()

    def newton_value(idx):
        return float(-g[idx].sum() / max(h[idx].sum(), 1e-12))

    def grow(idx, depth):
        node = builder.add(value=newton_value(idx))
        if depth >= params.max_depth:
            return node
        split = _best_split_newton(X, g, h, idx, params.min_samples_leaf)
        if split is None:
            return node
        gain, f, thr = split
        gain_acc[f] += gain
        freq_acc[f] += 1.0
        go_left = X[idx, f] < thr
        left = grow(idx[go_left], depth + 1)
        right = grow(idx[~go_left], depth + 1)
        builder.feature[node] = f
        builder.threshold[node] = thr
        builder.left[node] = left
        builder.right[node] = right
        return node

    grow(np.arange(X.shape[0]), 0)
    return builder.build()


def train_gbdt(X, y, params: GbdtParams = None, seed: int = 0) -> GbdtModel:
    """Logistic-loss boosting; deterministic (seed kept for interface parity)."""
    params = params or GbdtParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.float64)
    classes = np.unique(y)
    if classes.size != 2:
        raise ValueError("labels must contain both classes")
    p0 = y.mean()
    base = float(np.log(p0 / (1.0 - p0)))
    F = np.full(X.shape[0], base)
    trees = []
    gain = np.zeros(X.shape[1])
    freq = np.zeros(X.shape[1])
    for _ in range(params.n_rounds):
        p = 1.0 / (1.0 + np.exp(-F))
        g = p - y
        h = np.maximum(p * (1.0 - p), 1e-12)
        tree = _grow_newton_tree(X, g, h, params, gain, freq)
        trees.append(tree)
        F += params.learning_rate * tree.predict(X)
    return GbdtModel(trees, params, X.shape[1], base, gain, freq)


def gbdt_importances(model: GbdtModel):
    """(gain, frequency) importance vectors, each normalized to sum 1."""
    def norm(v):
        s = v.sum()
        return v / s if s > 0 else np.zeros_like(v)
    return norm(model.gain_raw), norm(model.freq_raw)


def gbdt_log_loss(model: GbdtModel, X, y, n_rounds=None):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    F = np.full(X.shape[0], model.base_score)
    use = model.trees if n_rounds is None else model.trees[:n_rounds]
    for tree in use:
        F += model.params.learning_rate * tree.predict(X)
    p = np.clip(1.0 / (1.0 + np.exp(-F)), 1e-12, 1 - 1e-12)
    return float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())


# ---------------------------------------------------------------------------
# candidate suppression
# ---------------------------------------------------------------------------


def suppress_false_positives(regions, features, model, tau_rf: float = 0.5):
    """Keep region k iff q_k >= tau_rf.  features: (n_regions, d) matrix in
    the model's selected-feature space.  Returns (kept_regions, q)."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[0] != len(regions):
        raise ValueError("one feature row per region required")
    q = forest_predict_proba(model, features)
    kept = [r for r, qi in zip(regions, q) if qi >= tau_rf]
    return kept, q


# ---------------------------------------------------------------------------
# serialization: versioned JSON with flat node arrays
# ---------------------------------------------------------------------------


def _tree_to_dict(tree):
    return {
        "feature": tree.feature.tolist(),
        "threshold": tree.threshold.tolist(),
        "left": tree.left.tolist(),
        "right": tree.right.tolist(),
        "value": tree.value.tolist(),
    }


def _tree_from_dict(d):
    return Tree(
        np.asarray(d["feature"], dtype=np.int32),
        np.asarray(d["threshold"], dtype=np.float64),
        np.asarray(d["left"], dtype=np.int32),
        np.asarray(d["right"], dtype=np.int32),
        np.asarray(d["value"], dtype=np.float64),
    )


def save_forest_json(model: ForestModel, path):
    payload = {
        "format": "tumorpost-forest",
        "version": 1,
        "n_features": model.n_features,
        "seed": model.seed,
        "params": vars(model.params),
        "importances_raw": model.importances_raw.tolist(),
        "trees": [_tree_to_dict(t) for t in model.trees],
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_forest_json(path) -> ForestModel:
    with open(path) as f:
        payload = json.load(f)
    if payload.get("format") != "tumorpost-forest" or payload.get("version") != 1:
        raise ValueError(f"{path}: not a version-1 forest file")
    return ForestModel(
        [_tree_from_dict(t) for t in payload["trees"]],
        ForestParams(**payload["params"]),
        payload["n_features"],
        payload["seed"],
        np.asarray(payload["importances_raw"], dtype=np.float64),
    )


def save_gbdt_json(model: GbdtModel, path):
    payload = {
        "format": "tumorpost-gbdt",
        "version": 1,
        "n_features": model.n_features,
        "base_score": model.base_score,
        "params": vars(model.params),
        "gain_raw": model.gain_raw.tolist(),
        "freq_raw": model.freq_raw.tolist(),
        "trees": [_tree_to_dict(t) for t in model.trees],
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_gbdt_json(path) -> GbdtModel:
    with open(path) as f:
        payload = json.load(f)
    if payload.get("format") != "tumorpost-gbdt" or payload.get("version") != 1:
        raise ValueError(f"{path}: not a version-1 gbdt file")
    return GbdtModel(
        [_tree_from_dict(t) for t in payload["trees"]],
        GbdtParams(**payload["params"]),
        payload["n_features"],
        payload["base_score"],
        np.asarray(payload["gain_raw"], dtype=np.float64),
        np.asarray(payload["freq_raw"], dtype=np.float64),
    )
