"""k-means clustering of daily profiles.

k-means++ seeding, Lloyd iterations, then Hartigan single-point transfers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .profiles import DailyProfileSet


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    feature_means: np.ndarray | None = None  # mean day features per cluster

    def forecast(self, cluster: int) -> np.ndarray:
        return self.centroids[int(cluster)].copy()


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    for _ in range(1, k):
        d2 = _sq_dists(X, np.array(centers)).min(axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(n)])
        else:
            centers.append(X[rng.choice(n, p=d2 / total)])
    return np.array(centers)


def _lloyd(X: np.ndarray, C: np.ndarray, max_iter: int):
    history = []
    labels = None
    for _ in range(max_iter):
        d2 = _sq_dists(X, C)
        new_labels = d2.argmin(axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels.copy()
        for j in range(C.shape[0]):
            if not (labels == j).any():
                # Re-seed an empty cluster at the point worst served by its centroid.
                far = int(np.argmax(((X - C[labels]) ** 2).sum(axis=1)))
                labels[far] = j
        C = np.array([X[labels == j].mean(axis=0) if (labels == j).any() else C[j] for j in range(C.shape[0])])
        history.append(float(((X - C[labels]) ** 2).sum()))
    d2 = _sq_dists(X, C)
    labels = d2.argmin(axis=1)
    for j in range(C.shape[0]):
        if (labels == j).any():
            C[j] = X[labels == j].mean(axis=0)
    return C, labels, float(((X - C[labels]) ** 2).sum()), history


def _hartigan(X: np.ndarray, labels: np.ndarray, k: int, history: list[float], max_pass: int = 100):
    """Move single points while that lowers inertia; Lloyd fixed points are often not transfer-optimal."""
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k).astype(float)
    C = np.array([X[labels == j].mean(axis=0) for j in range(k)])
    for _ in range(max_pass):
        moved = False
        for i in range(X.shape[0]):
            a = labels[i]
            if counts[a] <= 1:
                continue
            d2 = ((C - X[i]) ** 2).sum(axis=1)
            gain = counts / (counts + 1) * d2
            gain[a] = np.inf
            b = int(np.argmin(gain))
            if gain[b] < counts[a] / (counts[a] - 1) * d2[a] - 1e-12:
                C[a] = (C[a] * counts[a] - X[i]) / (counts[a] - 1)
                C[b] = (C[b] * counts[b] + X[i]) / (counts[b] + 1)
                counts[a] -= 1
                counts[b] += 1
                labels[i] = b
                moved = True
        if not moved:
            break
        C = np.array([X[labels == j].mean(axis=0) for j in range(k)])
        history.append(float(((X - C[labels]) ** 2).sum()))
    C = np.array([X[labels == j].mean(axis=0) for j in range(k)])
    return C, labels, float(((X - C[labels]) ** 2).sum()), history


def kmeans_fit(data: DailyProfileSet | np.ndarray, k: int, seed: int = 0, n_init: int = 30,
               max_iter: int = 300) -> ClusterModel:
    X = data.profiles if isinstance(data, DailyProfileSet) else np.atleast_2d(np.asarray(data, dtype=float))
    n = X.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k={k} must lie in [1, {n}] (number of profiles)")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        C, labels, inertia, hist = _lloyd(X, _plusplus(X, k, rng), max_iter)
        if all((labels == j).any() for j in range(k)):
            C, labels, inertia, hist = _hartigan(X, labels, k, hist)
        if best is None or inertia < best[2] - 1e-12:
            best = (C, labels, inertia, hist)
    C, labels, inertia, hist = best
    fmeans = None
    if isinstance(data, DailyProfileSet):
        fmeans = np.array([data.features[labels == j].mean(axis=0) if (labels == j).any()
                           else np.zeros(data.features.shape[1]) for j in range(k)])
    return ClusterModel(k, C, labels, inertia, hist, fmeans)
