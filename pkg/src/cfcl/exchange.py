"""Push-pull data exchange: reserve selection, dataset approximation and the
two-stage (cluster-level, then loss-level) importance sampler."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .clustering import ClusterResult, kmeans, nearest_points_to_centroids
from .model import augment_rows, embed, triplet_loss


@dataclass
class ReserveStore:
    """Points pushed once by ``owner`` and held by ``holder`` for scoring."""

    owner: int
    holder: int
    points: np.ndarray
    ids: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.points)


@dataclass
class SamplingPlan:
    clusters: Optional[ClusterResult]
    macro_probs: np.ndarray
    micro_probs: np.ndarray
    composed: np.ndarray
    candidate_ids: np.ndarray
    candidate_cluster: np.ndarray
    losses: np.ndarray
    chosen: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    temperature: float = 0.0

    def entropy(self):
        p = self.composed[self.composed > 0]
        return float(-(p * np.log(p)).sum())


def _check_size(dataset, k, what):
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    if k < 1:
        raise ValueError(f"{what} must be >= 1")
    return n


def select_reserve(dataset, K_reserve, rng, return_indices=False):
    """Datapoints nearest to the centroids of a K_reserve-means clustering."""
    X = np.asarray(dataset, dtype=float)
    n = _check_size(X, K_reserve, "K_reserve")
    if K_reserve > n:
        raise ValueError(f"K_reserve={K_reserve} exceeds dataset size {n}")
    if K_reserve == n:
        idx = np.arange(n)
    else:
        res = kmeans(X, K_reserve, rng)
        idx = np.array(nearest_points_to_centroids(X, res.centroids))
    return (X[idx], idx) if return_indices else X[idx]


def select_reserve_random(dataset, K_reserve, rng, return_indices=False):
    X = np.asarray(dataset, dtype=float)
    n = _check_size(X, K_reserve, "K_reserve")
    if K_reserve > n:
        raise ValueError(f"K_reserve={K_reserve} exceeds dataset size {n}")
    idx = np.sort(rng.choice(n, size=K_reserve, replace=False))
    return (X[idx], idx) if return_indices else X[idx]


def approximate_dataset(dataset, K_approx, rng, return_indices=False):
    """Uniform subsample of size min(K_approx, |dataset|) without replacement."""
    X = np.asarray(dataset, dtype=float)
    n = _check_size(X, K_approx, "K_approx")
    if K_approx >= n:
        idx = np.arange(n)
    else:
        idx = np.sort(rng.choice(n, size=K_approx, replace=False))
    return (X[idx], idx) if return_indices else X[idx]


def macro_probabilities(cluster_counts):
    """Cluster probabilities from ``(approx_count, push_count)`` pairs.

    X(l) = a / (a + r) and P(l) = X(l) / sum X; clusters without candidates get 0.
    """
    counts = np.asarray(cluster_counts, dtype=float).reshape(-1, 2)
    approx, push = counts[:, 0], counts[:, 1]
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    if not np.any(approx > 0):
        raise ValueError("no cluster contains a candidate")
    X = np.zeros(len(counts))
    has = approx > 0
    X[has] = approx[has] / (approx[has] + push[has])
    return X / X.sum()


def micro_probabilities(losses, temperature):
    """Softmax of ``temperature * losses`` with max-shift."""
    z = float(temperature) * np.asarray(losses, dtype=float)
    if z.size == 0:
        raise ValueError("empty loss vector")
    e = np.exp(z - z.max())
    return e / e.sum()


def expected_negative_losses(model, reserve, candidates, m=1.0, positives=None, rng=None, augmentations=None):
    """Mean triplet loss over reserve anchors for each candidate used as negative.

    Positive views come from ``positives`` or are drawn once per anchor with
    ``rng``/``augmentations`` and shared across candidates.
    """
    R = np.asarray(reserve, dtype=float)
    if len(R) == 0:
        raise ValueError("reserve is empty")
    if positives is None:
        positives = augment_rows(R, augmentations, rng)
    ea = embed(model, R)
    ep = embed(model, positives)
    ec = embed(model, np.asarray(candidates, dtype=float))
    pos = ((ea - ep) ** 2).sum(1)
    neg = ((ea[:, None, :] - ec[None, :, :]) ** 2).sum(-1)
    return np.maximum(0.0, pos[:, None] - neg + m).mean(0)


def expected_negative_loss(model, reserve, candidate, m, rng, augmentations):
    """Single-candidate form of :func:`expected_negative_losses`."""
    R = np.asarray(reserve, dtype=float)
    if len(R) == 0:
        raise ValueError("reserve is empty")
    positives = augment_rows(R, augmentations, rng)
    ea, ep = embed(model, R), embed(model, positives)
    en = embed(model, np.asarray(candidate, dtype=float))
    return float(np.mean(triplet_loss(ea, ep, en[None, :], m)))


def composed_probabilities(candidate_cluster, reserve_cluster, losses, temperature, n_clusters):
    """Per-candidate probability = micro (within cluster) x macro (cluster).

    Returns ``(macro, micro, composed)``.
    """
    candidate_cluster = np.asarray(candidate_cluster)
    reserve_cluster = np.asarray(reserve_cluster)
    losses = np.asarray(losses, dtype=float)
    a = np.bincount(candidate_cluster, minlength=n_clusters)
    r = np.bincount(reserve_cluster, minlength=n_clusters)
    macro = macro_probabilities(np.stack([a, r], axis=1))
    micro = np.zeros(len(losses))
    for k in np.flatnonzero(a):
        members = candidate_cluster == k
        micro[members] = micro_probabilities(losses[members], temperature)
    composed = micro * macro[candidate_cluster]
    return macro, micro, composed


def sample_without_replacement(p, n, rng):
    """Sequential draws, renormalizing over the remaining candidates."""
    p = np.asarray(p, dtype=float).copy()
    if n > len(p):
        raise ValueError(f"cannot draw {n} from {len(p)} candidates")
    chosen = []
    for _ in range(n):
        total = p.sum()
        if total <= 0:
            # remaining mass underflowed; fall back to uniform over what is left
            p = np.where(np.isin(np.arange(len(p)), chosen), 0.0, 1.0)
            total = p.sum()
        k = int(np.searchsorted(np.cumsum(p), rng.random() * total, side="right"))
        k = min(k, len(p) - 1)
        while p[k] == 0:
            k -= 1
        chosen.append(k)
        p[k] = 0.0
    return np.array(chosen, dtype=int)


def pull_sample(approx, reserve, model, n, temperature, cluster_count, rng, augmentations,
                m=1.0, candidate_ids=None):
    """Choose ``n`` of the transmitter's approximation points for the receiver.

    Embeds reserve and candidates, clusters the union, and samples candidates
    by the composed cluster/loss probabilities. Returns ``(points, plan)``.
    """
    A = np.asarray(approx, dtype=float)
    R = np.asarray(reserve, dtype=float)
    if len(R) == 0:
        raise ValueError("reserve is empty")
    if n > len(A):
        raise ValueError(f"budget {n} exceeds candidate count {len(A)}")
    ids = np.arange(len(A)) if candidate_ids is None else np.asarray(candidate_ids)
    ea, er = embed(model, A), embed(model, R)
    union = np.concatenate([ea, er])
    K = min(cluster_count, len(union))
    clusters = kmeans(union, K, rng)
    cand_cluster = clusters.assignments[:len(A)]
    res_cluster = clusters.assignments[len(A):]

    positives = augment_rows(R, augmentations, rng)
    losses = expected_negative_losses(model, R, A, m, positives=positives)
    macro, micro, composed = composed_probabilities(cand_cluster, res_cluster, losses, temperature, K)
    chosen = sample_without_replacement(composed, n, rng)
    plan = SamplingPlan(clusters, macro, micro, composed, ids, cand_cluster, losses, chosen, float(temperature))
    return A[chosen], plan


def uniform_pull(approx, n, rng, candidate_ids=None):
    """Baseline: ``n`` candidates uniformly without replacement."""
    A = np.asarray(approx, dtype=float)
    if n > len(A):
        raise ValueError(f"budget {n} exceeds candidate count {len(A)}")
    ids = np.arange(len(A)) if candidate_ids is None else np.asarray(candidate_ids)
    chosen = rng.choice(len(A), size=n, replace=False)
    p = np.full(len(A), 1.0 / len(A))
    plan = SamplingPlan(None, np.ones(1), p.copy(), p, ids, np.zeros(len(A), dtype=int),
                        np.zeros(len(A)), chosen, 0.0)
    return A[chosen], plan
