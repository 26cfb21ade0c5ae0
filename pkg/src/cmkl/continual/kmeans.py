"""Lloyd's K-means with k-means++ seeding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def kmeans_plusplus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(points, points[chosen]).min(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # every remaining point coincides with a centroid
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(points, points[[nxt]])[:, 0])
    return points[chosen].copy()


def _lloyd(points, centroids, max_iter, tol):
    labels = np.zeros(len(points), dtype=np.int64)
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(points, centroids)
        labels = d2.argmin(axis=1)
        new = centroids.copy()
        for c in range(len(centroids)):
            members = points[labels == c]
            if len(members):
                new[c] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the point worst served by its centroid
                far = int(d2[np.arange(len(points)), labels].argmax())
                new[c] = points[far]
        shift = np.linalg.norm(new - centroids) / max(np.linalg.norm(centroids), 1e-12)
        centroids = new
        if shift < tol:
            break
    d2 = _sq_dists(points, centroids)
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(len(points)), labels].sum())
    return centroids, labels, inertia, it


def kmeans(
    points: np.ndarray,
    k: int,
    rng: np.random.Generator,
    n_init: int = 8,
    max_iter: int = 50,
    tol: float = 1e-6,
) -> KMeansResult:
    """Best-of-``n_init`` Lloyd runs (lowest inertia, earliest on ties)."""
    points = np.asarray(points, dtype=np.float64)
    if not 1 <= k <= len(points):
        raise ValueError(f"need 1 <= k <= n_points, got k={k}, n={len(points)}")
    best = None
    for _ in range(n_init):
        cents, labels, inertia, it = _lloyd(points, kmeans_plusplus(points, k, rng), max_iter, tol)
        if best is None or inertia < best.inertia - 1e-12:
            best = KMeansResult(cents, labels, inertia, it)
    return best


def nearest_to_centroids(points: np.ndarray, result: KMeansResult) -> list[int]:
    """Index of the member nearest each non-empty cluster's centroid (lowest index on ties)."""
    picks = []
    for c in range(len(result.centroids)):
        members = np.flatnonzero(result.labels == c)
        if len(members) == 0:
            continue
        d2 = ((points[members] - result.centroids[c]) ** 2).sum(axis=1)
        picks.append(int(members[int(d2.argmin())]))
    return picks
