"""Spherical K-means on memory-bank features.

Points are unit vectors and so are the centroids (each update renormalizes
the cluster mean), which makes squared Euclidean distance ``2 - 2 cos``.
The centroid update is then the exact minimizer of the within-cluster
inertia under the unit-norm constraint, so inertia never increases.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyInputError, TooFewPointsError
from .ot import MARGINAL_FLOOR, floor_marginal
from .tensor import as_matrix, l2_normalize_rows


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    iterations: int
    # inertia measured after each assignment step
    inertia_history: list = field(default_factory=list)

    @property
    def sizes(self):
        return np.bincount(self.labels, minlength=len(self.centroids))


def _sq_dists(x, centroids):
    d = 2.0 - 2.0 * (x @ centroids.T)
    return np.maximum(d, 0.0)


def kmeans_plusplus(x, k, rng):
    """D^2-weighted seeding; returns the chosen row indices."""
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(x, x[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point coincides with a chosen seed
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dists(x, x[[idx]])[:, 0])
    return np.array(chosen)


def kmeans(features, k, rng, max_iter=100, n_init=1):
    """Lloyd iterations from k-means++ seeding on unit-norm ``features``.

    Stops at an assignment fixpoint or after ``max_iter`` rounds. A cluster
    that ends up empty is reseeded with the point currently farthest from
    its own centroid. With ``n_init > 1`` the seeding and Lloyd rounds are
    repeated and the lowest-inertia run is kept (earliest on ties).
    """
    x = as_matrix(features, "features")
    n = len(x)
    if k < 1:
        raise ValueError("k must be >= 1")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    if n < k:
        raise TooFewPointsError(f"{n} points cannot form {k} clusters")
    best = None
    for _ in range(n_init):
        run = _lloyd(x, k, rng, max_iter)
        if best is None or run.inertia < best.inertia:
            best = run
    return best


def _lloyd(x, k, rng, max_iter):
    n = len(x)
    centroids = x[kmeans_plusplus(x, k, rng)].copy()
    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(x, centroids)
        new_labels = np.argmin(d, axis=1)
        history.append(float(d[np.arange(n), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels

        sums = (labels[None, :] == np.arange(k)[:, None]).astype(np.float64) @ x
        counts = np.bincount(labels, minlength=k)
        point_d = d[np.arange(n), labels]
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmax(point_d))
            old = labels[far]
            sums[old] -= x[far]
            counts[old] -= 1
            labels[far] = j
            sums[j] = x[far]
            counts[j] = 1
            point_d[far] = -1.0
        norms = np.linalg.norm(sums, axis=1)
        # a cluster whose members cancel out keeps its previous direction
        keep = norms < 1e-12
        sums[keep] = centroids[keep]
        centroids = l2_normalize_rows(sums)

    d = _sq_dists(x, centroids)
    labels = np.argmin(d, axis=1)
    inertia = float(d[np.arange(n), labels].sum())
    return KMeansResult(centroids=centroids, labels=labels, inertia=inertia,
                        iterations=it, inertia_history=history)


def marginal_from_labels(labels, k, floor=MARGINAL_FLOOR):
    """Cluster-size distribution of ``labels``, floored so no entry is below ``floor``."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyInputError("labels must be non-empty")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    return floor_marginal(counts / counts.sum(), floor)
