"""Seeded k-means (k-means++ init, Lloyd iterations).

Shared by the mixture-model initializer and the bag-of-words codebook. All
randomness flows through the supplied generator, so results are reproducible.
"""

import numpy as np

from .errors import ConfigurationError


def kmeans_plus_plus(X, k, rng):
    """Pick k seed centers: first uniform, the rest proportional to squared distance."""
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[j:] = centers[0]
            break
        centers[j] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((X - centers[j]) ** 2, axis=1))
    return centers


def assign(X, centers):
    """Index of the nearest center per row; ties go to the lowest index."""
    d2 = (
        np.sum(X * X, axis=1)[:, None]
        - 2.0 * X @ centers.T
        + np.sum(centers * centers, axis=1)[None, :]
    )
    return np.argmin(d2, axis=1)


def kmeans(X, k, rng, n_iter=10):
    """Lloyd's algorithm from a k-means++ start; returns (centers, labels).

    An emptied cluster is re-seeded at the point currently farthest from its
    center, keeping the run deterministic for a given generator state.
    """
    if X.shape[0] < k:
        raise ConfigurationError(f"k-means needs at least k={k} points, got {X.shape[0]}")
    centers = kmeans_plus_plus(X, k, rng)
    labels = assign(X, centers)
    for _ in range(n_iter):
        d_assigned = np.sum((X - centers[labels]) ** 2, axis=1)
        for j in range(k):
            members = labels == j
            if not members.any():
                far = int(np.argmax(d_assigned))
                centers[j] = X[far]
                d_assigned[far] = -1.0
            else:
                centers[j] = X[members].mean(axis=0)
        new_labels = assign(X, centers)
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return centers, labels
