"""K-means++ seeding, Lloyd iterations and centroid-nearest point selection."""
from dataclasses import dataclass, field
from typing import List

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted


@dataclass
class ClusterResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    n_iter: int = 0
    inertia_history: List[float] = field(default_factory=list)


def sq_distances(X, C, exact=False):
    """Pairwise squared Euclidean distances, shape (len(X), len(C)).

    ``exact`` sums explicit differences so equidistant ties compare equal.
    """
    X = np.asarray(X, dtype=float)
    C = np.asarray(C, dtype=float)
    if exact:
        out = np.empty((len(X), len(C)))
        for k in range(len(C)):
            out[:, k] = ((X - C[k]) ** 2).sum(1)
        return out
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _check_points(points, K):
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise ValueError("no points to cluster")
    if not 1 <= K <= X.shape[0]:
        raise ValueError(f"K={K} must satisfy 1 <= K <= {X.shape[0]}")
    return X


def kmeanspp_seed(points, K, rng, first_index=None, return_indices=False):
    """Standard D^2 seeding. ``first_index`` forces the first pick."""
    X = _check_points(points, K)
    n = X.shape[0]
    idx = [int(rng.integers(n)) if first_index is None else int(first_index)]
    d2 = ((X - X[idx[0]]) ** 2).sum(1)
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            cdf = np.cumsum(d2)
            nxt = int(np.searchsorted(cdf, rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        else:
            # every point coincides with a chosen centroid
            free = np.setdiff1d(np.arange(n), idx)
            nxt = int(free[rng.integers(len(free))])
        idx.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(1))
    centroids = X[idx].copy()
    if return_indices:
        return centroids, np.array(idx)
    return centroids


def kmeans(points, K, rng, max_iters=100, tol=1e-6, init=None):
    """Lloyd iterations from a K-means++ seed (or the given ``init`` centroids)."""
    X = _check_points(points, K)
    C = kmeanspp_seed(X, K, rng) if init is None else np.array(init, dtype=float)
    history = []
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        d = sq_distances(X, C)
        assign = d.argmin(1)
        history.append(float(d[np.arange(len(X)), assign].sum()))
        counts = np.bincount(assign, minlength=K)
        onehot = np.zeros((len(X), K))
        onehot[np.arange(len(X)), assign] = 1.0
        sums = onehot.T @ X
        new = C.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if len(empty):
            # repair: the farthest points from their centroids seed the empty clusters
            own = ((X - new[assign]) ** 2).sum(1)
            far = np.argsort(-own, kind="stable")
            for k, i in zip(empty, far):
                new[k] = X[i]
        shift = np.sqrt(((new - C) ** 2).sum(1)).max()
        C = new
        if shift < tol:
            break
    d = sq_distances(X, C)
    assign = d.argmin(1)
    inertia = float(d[np.arange(len(X)), assign].sum())
    history.append(inertia)
    return ClusterResult(C, assign, inertia, n_iter, history)


def nearest_points_to_centroids(points, centroids):
    """Index of the closest point to each centroid, without reuse.

    Ties go to the lowest index; a centroid whose nearest point was already
    taken falls back to its next-nearest unused point.
    """
    X = np.asarray(points, dtype=float)
    C = np.asarray(centroids, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if C.ndim == 1:
        C = C[:, None]
    if len(X) == 0 or len(C) == 0:
        raise ValueError("points and centroids must be nonempty")
    if len(C) > len(X):
        raise ValueError("more centroids than points")
    d = sq_distances(X, C, exact=True)
    used = np.zeros(len(X), dtype=bool)
    out = []
    for k in range(len(C)):
        order = np.argsort(d[:, k], kind="stable")
        i = next(int(i) for i in order if not used[i])
        used[i] = True
        out.append(i)
    return out


class KMeansPP(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`kmeans`."""

    def __init__(self, n_clusters=4, max_iter=100, tol=1e-6, random_state=None):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X)
        rng = np.random.default_rng(check_random_state(self.random_state).randint(2**31))
        res = kmeans(X, self.n_clusters, rng, self.max_iter, self.tol)
        self.cluster_centers_ = res.centroids
        self.labels_ = res.assignments
        self.inertia_ = res.inertia
        self.n_iter_ = res.n_iter
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X)
        return sq_distances(X, self.cluster_centers_).argmin(1)

    def transform(self, X):
        check_is_fitted(self, "cluster_centers_")
        return np.sqrt(sq_distances(check_array(X), self.cluster_centers_))
