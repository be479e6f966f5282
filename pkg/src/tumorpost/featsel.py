"""Feature standardization, redundancy filtering, ranking and stable selection.

Six ranking strategies (RFE, Lasso, forest importance, boosted-tree gain,
boosted-tree split frequency, Relief-F) each produce a full permutation of
the surviving features; the stable subset is the intersection of their
top-30 sets, padded or trimmed to the target size by mean rank.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from . import ensemble, rng as rngmod

STD_FLOOR = 1e-12

STRATEGIES = ("RFE", "LASSO", "RF-IMP", "XGB-GAIN", "GBDT-FREQ", "RELIEFF")


@dataclass
class StandardizationParams:
    mean: np.ndarray
    std: np.ndarray  # floored at STD_FLOOR

    def apply(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std


def fit_standardize(X) -> StandardizationParams:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("standardization needs a matrix with >= 2 rows")
    mean = X.mean(axis=0)
    std = np.maximum(X.std(axis=0), STD_FLOOR)
    return StandardizationParams(mean, std)


def fit_apply_standardize(train_X, *other_Xs):
    """Fit on train, apply unchanged to every other matrix.

    Returns (train_std, [others_std...], params).
    """
    params = fit_standardize(train_X)
    train_std = params.apply(train_X)
    others = [params.apply(X) for X in other_Xs]
    return train_std, others, params


def drop_near_zero_variance(X, eps=1e-8):
    """Indices of columns with pre-standardization variance >= eps."""
    var = np.asarray(X, dtype=np.float64).var(axis=0)
    return np.flatnonzero(var >= eps)


def distance_correlation_matrix(X):
    """Pairwise distance correlation (biased V-statistic form) of columns."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    centered = np.empty((d, n * n))
    for j in range(d):
        a = np.abs(X[:, j, None] - X[None, :, j])
        a = a - a.mean(axis=0, keepdims=True) - a.mean(axis=1, keepdims=True) + a.mean()
        centered[j] = a.ravel()
    cov = centered @ centered.T / (n * n)  # dCov^2
    dvar = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    denom = np.outer(dvar, dvar)
    with np.errstate(invalid="ignore", divide="ignore"):
        dcor2 = np.where(denom > 0, cov / denom, 0.0)
    return np.sqrt(np.clip(dcor2, 0.0, None))


def drop_correlated(X, pearson_max=0.95, dcor_max=0.95):
    """Greedy scan in column order; drops the later column of any pair with
    |Pearson| > pearson_max or distance correlation > dcor_max."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 3:
        raise ValueError("correlation filtering needs >= 3 rows")
    d = X.shape[1]
    std = X.std(axis=0)
    Z = (X - X.mean(axis=0)) / np.where(std > 0, std, 1.0)
    pearson = np.abs(Z.T @ Z / X.shape[0])
    pearson[:, std == 0] = 0.0
    pearson[std == 0, :] = 0.0
    dcor = distance_correlation_matrix(X)
    keep = []
    for j in range(d):
        redundant = any(
            pearson[j, k] > pearson_max or dcor[j, k] > dcor_max for k in keep
        )
        if not redundant:
            keep.append(j)
    return np.asarray(keep, dtype=np.int64)


@dataclass
class FeatureRanking:
    strategy: str
    order: np.ndarray          # feature indices, best first
    scores: np.ndarray = field(repr=False)  # per-feature, higher is better

    def __post_init__(self):
        d = self.scores.shape[0]
        if sorted(self.order.tolist()) != list(range(d)):
            raise ValueError("ranking order must be a permutation of features")

    def top(self, k):
        return set(int(i) for i in self.order[:k])


def _order_by_score(scores):
    # descending score, ascending index on ties
    d = scores.shape[0]
    return np.lexsort((np.arange(d), -scores))


def _soft(z, t):
    return np.sign(z) * max(abs(z) - t, 0.0)


def lasso_coordinate_descent(X, y, lam, beta0=None, max_sweeps=200, tol=1e-8):
    """L1 linear regression via gram-matrix coordinate descent.

    Minimizes (1/2n)||y - X b||^2 + lam * ||b||_1.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    G = X.T @ X / n
    c = X.T @ y / n
    beta = np.zeros(d) if beta0 is None else beta0.copy()
    Gb = G @ beta
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(d):
            gjj = G[j, j]
            if gjj < STD_FLOOR:
                continue
            rho = c[j] - (Gb[j] - gjj * beta[j])
            new = _soft(rho, lam) / gjj
            step = new - beta[j]
            if step != 0.0:
                Gb += G[:, j] * step
                beta[j] = new
                delta = max(delta, abs(step))
        if delta < tol:
            break
    return beta


def lasso_path_select(X, y, max_nonzero=30, n_grid=50):
    """Sweep a 50-point log grid; keep the smallest lambda whose solution has
    at most max_nonzero nonzeros.  Returns (beta, lam)."""
    X = np.asarray(X, dtype=np.float64)
    yy = np.where(np.asarray(y) > 0, 1.0, -1.0)
    n = X.shape[0]
    lam_max = float(np.abs(X.T @ yy).max()) / n
    if lam_max <= 0:
        lam_max = 1.0
    grid = np.logspace(np.log10(lam_max), np.log10(lam_max * 1e-3), n_grid)
    beta = np.zeros(X.shape[1])
    best = (np.zeros(X.shape[1]), grid[0])
    for lam in grid:
        beta = lasso_coordinate_descent(X, yy, lam, beta0=beta)
        if np.count_nonzero(beta) <= max_nonzero:
            best = (beta.copy(), lam)
    return best


def relieff_weights(X, y, k=10):
    """Relief-F with k nearest hits/misses over all samples, Manhattan
    distance on (already standardized) features."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(int)
    n, d = X.shape
    dist = cdist(X, X, metric="cityblock")
    np.fill_diagonal(dist, np.inf)
    w = np.zeros(d)
    for i in range(n):
        same = np.flatnonzero(y == y[i])
        same = same[same != i]
        other = np.flatnonzero(y != y[i])
        if same.size == 0 or other.size == 0:
            continue
        hits = same[np.argsort(dist[i, same], kind="stable")[:k]]
        misses = other[np.argsort(dist[i, other], kind="stable")[:k]]
        w += np.abs(X[misses] - X[i]).mean(axis=0)
        w -= np.abs(X[hits] - X[i]).mean(axis=0)
    return w / n


def _rfe_ranking(X, y, seed):
    """Drop the lowest-importance 10% per round until <= 30 features remain.

    Later-surviving features rank higher; within a round, by importance.
    """
    d = X.shape[1]
    alive = np.arange(d)
    scores = np.zeros(d)
    round_idx = 0
    params = ensemble.ForestParams(n_trees=50, max_depth=12, min_samples_leaf=5)
    while alive.size > 30:
        round_idx += 1
        model = ensemble.train_forest(
            X[:, alive], y, params, seed=rngmod.stream(seed, "rfe", round_idx).integers(2 ** 31)
        )
        imp = ensemble.forest_importance(model)
        n_drop = max(1, int(0.1 * alive.size))
        drop_local = np.lexsort((np.arange(alive.size), imp))[:n_drop]
        kept_local = np.setdiff1d(np.arange(alive.size), drop_local)
        # eliminated features score by round (earlier rounds are worse)
        scores[alive[drop_local]] = round_idx + np.clip(imp[drop_local], 0, 0.999)
        alive = alive[kept_local]
    model = ensemble.train_forest(
        X[:, alive], y, params, seed=rngmod.stream(seed, "rfe", "final").integers(2 ** 31)
    )
    final_imp = ensemble.forest_importance(model)
    scores[alive] = round_idx + 1 + np.clip(final_imp, 0, 0.999)
    return scores


def rank_features(X, y, strategy, seed=0) -> FeatureRanking:
    """Rank all features with one of the six strategies (see STRATEGIES)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(int)
    classes = np.unique(y)
    if classes.size != 2:
        raise ValueError("ranking needs binary labels with both classes present")
    if strategy == "RFE":
        scores = _rfe_ranking(X, y, seed)
    elif strategy == "LASSO":
        Z, _, _ = fit_apply_standardize(X)
        beta, _ = lasso_path_select(Z, y)
        scores = np.abs(beta)
    elif strategy == "RF-IMP":
        params = ensemble.ForestParams(n_trees=100, max_depth=12, min_samples_leaf=5)
        model = ensemble.train_forest(
            X, y, params, seed=rngmod.stream(seed, "rfimp").integers(2 ** 31)
        )
        scores = ensemble.forest_importance(model)
    elif strategy in ("XGB-GAIN", "GBDT-FREQ"):
        model = ensemble.train_gbdt(
            X, y, ensemble.GbdtParams(),
            seed=rngmod.stream(seed, "gbdt").integers(2 ** 31),
        )
        gain, freq = ensemble.gbdt_importances(model)
        scores = gain if strategy == "XGB-GAIN" else freq
    elif strategy == "RELIEFF":
        Z, _, _ = fit_apply_standardize(X)
        scores = relieff_weights(Z, y, k=10)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return FeatureRanking(strategy, _order_by_score(scores), scores)


@dataclass
class SelectedSubset:
    indices: np.ndarray                 # adjusted set, ascending
    raw_intersection: np.ndarray        # ascending
    top_sets: dict                      # strategy -> set of indices
    mean_rank: np.ndarray = field(repr=False)


def select_stable(rankings, top_k=30, target=20) -> SelectedSubset:
    """Intersect the six top-k sets; pad or trim to the target size by
    ascending mean rank position across strategies."""
    if not rankings:
        raise ValueError("need at least one ranking")
    d = rankings[0].scores.shape[0]
    top_sets = {r.strategy: r.top(top_k) for r in rankings}
    inter = set.intersection(*top_sets.values())
    rank_pos = np.zeros((len(rankings), d))
    for i, r in enumerate(rankings):
        rank_pos[i, r.order] = np.arange(d)
    mean_rank = rank_pos.mean(axis=0)
    by_rank = np.lexsort((np.arange(d), mean_rank))
    if len(inter) >= target:
        members = sorted(inter, key=lambda f: (mean_rank[f], f))[:target]
    else:
        members = sorted(inter)
        for f in by_rank:
            if len(members) >= target:
                break
            if int(f) not in members:
                members.append(int(f))
    adjusted = np.asarray(sorted(int(m) for m in members), dtype=np.int64)
    return SelectedSubset(
        indices=adjusted,
        raw_intersection=np.asarray(sorted(inter), dtype=np.int64),
        top_sets=top_sets,
        mean_rank=mean_rank,
    )


def rankings_to_json(rankings):
    return [
        {
            "strategy": r.strategy,
            "order": [int(i) for i in r.order],
            "scores": [float(s) for s in r.scores],
        }
        for r in rankings
    ]


def rankings_from_json(payload):
    return [
        FeatureRanking(
            d["strategy"], np.asarray(d["order"], dtype=np.int64),
            np.asarray(d["scores"], dtype=np.float64),
        )
        for d in payload
    ]
