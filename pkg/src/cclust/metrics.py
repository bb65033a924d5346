"""Clustering evaluation: k-means, optimal-matching accuracy, NMI,
cluster geometry statistics, and the original-vs-augmented similarity
histogram.

k-means is implemented here rather than borrowed so the seeding, the
empty-cluster repair rule, and per-iteration objective tracking are all
pinned down and deterministic under an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import ensure_matrix, pairwise_sqdist
from .errors import DegenerateVectorError


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _wcss(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    return float(np.sum((x - centroids[labels]) ** 2))


def _kmeans_pp_seed(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each next centroid drawn with probability
    proportional to the squared distance to the nearest chosen one."""
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = pairwise_sqdist(x, x[chosen[-1]][None, :])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))  # all remaining mass at chosen points
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, pairwise_sqdist(x, x[idx][None, :])[:, 0])
    return x[chosen].copy()


def kmeans_restarts(
    x: np.ndarray, k: int, n_restarts: int, max_iters: int = 100, seed=0
) -> tuple[np.ndarray, np.ndarray]:
    """Best-of-n k-means by final within-cluster sum of squares; the
    standard evaluation protocol."""
    rng = _as_rng(seed)
    best = None
    for _ in range(max(1, n_restarts)):
        centroids, labels, history = kmeans(x, k, max_iters, rng, return_wcss_history=True)
        if best is None or history[-1] < best[0]:
            best = (history[-1], centroids, labels)
    return best[1], best[2]


def kmeans(
    x: np.ndarray,
    k: int,
    max_iters: int = 100,
    seed=0,
    return_wcss_history: bool = False,
):
    """Lloyd's algorithm with k-means++ seeding.

    Iterates until the assignment reaches a fixed point or ``max_iters``
    update rounds have run. A cluster that ends up empty is re-seeded to
    the point currently farthest from its own centroid (skipped when that
    distance is zero, i.e. the data cannot fill k clusters). The
    within-cluster sum of squares never increases across iterations.
    """
    x = ensure_matrix(x, "x")
    n = x.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = _as_rng(seed)
    centroids = _kmeans_pp_seed(x, k, rng)
    labels = np.argmin(pairwise_sqdist(x, centroids), axis=1)
    history = [_wcss(x, centroids, labels)]
    for _ in range(max_iters):
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = x[members].mean(axis=0)
        empties = [c for c in range(k) if not np.any(labels == c)]
        if empties:
            own_dist = np.sum((x - centroids[labels]) ** 2, axis=1)
            for c in empties:
                far = int(np.argmax(own_dist))
                if own_dist[far] <= 0.0:
                    break
                centroids[c] = x[far]
                own_dist[far] = -1.0
        new_labels = np.argmin(pairwise_sqdist(x, centroids), axis=1)
        history.append(_wcss(x, centroids, new_labels))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    if return_wcss_history:
        return centroids, labels, history
    return centroids, labels


# ---------------------------------------------------------------------------
# Partition agreement metrics
# ---------------------------------------------------------------------------

def contingency_table(true_labels, pred_labels) -> np.ndarray:
    """Count matrix with one row per distinct true label and one column per
    distinct predicted label."""
    t = np.asarray(true_labels).ravel()
    p = np.asarray(pred_labels).ravel()
    if t.shape != p.shape or t.size == 0:
        raise ValueError("label vectors must be nonempty and of equal length")
    _, ti = np.unique(t, return_inverse=True)
    _, pi = np.unique(p, return_inverse=True)
    table = np.zeros((ti.max() + 1, pi.max() + 1), dtype=np.int64)
    np.add.at(table, (ti, pi), 1)
    return table


def accuracy(true_labels, pred_labels) -> float:
    """Clustering accuracy: the best one-to-one matching of predicted
    clusters to true classes (Hungarian algorithm on the zero-padded
    square contingency table)."""
    table = contingency_table(true_labels, pred_labels)
    size = max(table.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[: table.shape[0], : table.shape[1]] = table
    rows, cols = linear_sum_assignment(-padded)
    return float(padded[rows, cols].sum()) / float(table.sum())


def _entropy(counts: np.ndarray) -> float:
    p = counts / counts.sum()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def nmi(true_labels, pred_labels) -> float:
    """Normalized mutual information with natural logs, normalized by the
    geometric mean of the two partition entropies. Two identical
    single-cluster partitions score 1.0; if exactly one side is a single
    cluster the score is 0.0."""
    table = contingency_table(true_labels, pred_labels)
    n = table.sum()
    h_true = _entropy(table.sum(axis=1))
    h_pred = _entropy(table.sum(axis=0))
    if h_true == 0.0 and h_pred == 0.0:
        return 1.0
    if h_true == 0.0 or h_pred == 0.0:
        return 0.0
    pij = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / (n * n)
    mask = table > 0
    mi = float((pij[mask] * np.log(pij[mask] / outer[mask])).sum())
    return float(np.clip(mi / np.sqrt(h_true * h_pred), 0.0, 1.0))


# ---------------------------------------------------------------------------
# Cluster geometry
# ---------------------------------------------------------------------------

@dataclass
class ClusterGeometry:
    """Per-cluster dispersion and separation: ``intra[k]`` is the mean
    distance from cluster k's centroid to its members, ``inter[k]`` the
    distance to the nearest other centroid."""

    intra: np.ndarray
    inter: np.ndarray
    mean_intra: float
    mean_inter: float


def _cosine_distance_to(point_rows: np.ndarray, ref: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(point_rows, axis=1)
    ref_norm = np.linalg.norm(ref)
    if ref_norm == 0.0 or np.any(norms == 0.0):
        raise DegenerateVectorError("cosine distance undefined for zero-norm vectors")
    cos = np.clip(point_rows @ ref / (norms * ref_norm), -1.0, 1.0)
    return 1.0 - cos


def cluster_geometry(
    e: np.ndarray,
    labels,
    metric: str = "euclidean",
    n_clusters: int | None = None,
) -> ClusterGeometry:
    """Centroid-based geometry of a labeled embedding set.

    Clusters are the distinct label values (or 0..n_clusters-1 when
    ``n_clusters`` is given, in which case every cluster must be
    populated). With a single cluster the inter-cluster distance is NaN.
    """
    if metric not in ("euclidean", "cosine_distance"):
        raise ValueError(f"unknown metric {metric!r}")
    e = ensure_matrix(e, "e")
    labels = np.asarray(labels).ravel()
    if labels.shape[0] != e.shape[0]:
        raise ValueError("labels length must match row count")
    if n_clusters is None:
        uniq = np.unique(labels)
    else:
        uniq = np.arange(n_clusters)
        present = np.unique(labels)
        missing = np.setdiff1d(uniq, present)
        if missing.size or np.setdiff1d(present, uniq).size:
            raise ValueError(f"clusters {missing.tolist()} are empty")
    k = uniq.size
    centroids = np.stack([e[labels == c].mean(axis=0) for c in uniq])
    intra = np.empty(k)
    for i, c in enumerate(uniq):
        members = e[labels == c]
        if metric == "euclidean":
            dists = np.linalg.norm(members - centroids[i], axis=1)
        else:
            dists = _cosine_distance_to(members, centroids[i])
        intra[i] = dists.mean()
    if k == 1:
        inter = np.array([np.nan])
    else:
        if metric == "euclidean":
            cd = np.sqrt(np.maximum(pairwise_sqdist(centroids, centroids), 0.0))
        else:
            cd = np.empty((k, k))
            for i in range(k):
                cd[i] = _cosine_distance_to(centroids, centroids[i])
        np.fill_diagonal(cd, np.inf)
        inter = cd.min(axis=1)
    return ClusterGeometry(
        intra=intra,
        inter=inter,
        mean_intra=float(intra.mean()),
        mean_inter=float(inter.mean()),
    )


@dataclass
class SimilarityHistogram:
    counts: np.ndarray
    edges: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def aug_similarity_histogram(
    e_orig: np.ndarray, e_aug: np.ndarray, bins: int = 50
) -> SimilarityHistogram:
    """Histogram over [-1, 1] of the per-row cosine similarity between an
    instance's embedding and its augmented view's embedding."""
    e_orig = ensure_matrix(e_orig, "e_orig")
    e_aug = ensure_matrix(e_aug, "e_aug")
    if e_orig.shape[0] != e_aug.shape[0]:
        raise ValueError("row counts must match")
    n1 = np.linalg.norm(e_orig, axis=1)
    n2 = np.linalg.norm(e_aug, axis=1)
    if np.any(n1 == 0.0) or np.any(n2 == 0.0):
        raise DegenerateVectorError("zero-norm row in similarity histogram input")
    sims = np.clip((e_orig * e_aug).sum(axis=1) / (n1 * n2), -1.0, 1.0)
    counts, edges = np.histogram(sims, bins=bins, range=(-1.0, 1.0))
    return SimilarityHistogram(counts=counts, edges=edges)
