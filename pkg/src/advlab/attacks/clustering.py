"""K-means, silhouette values, and the silhouette-driven label-flipping attack."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import ConfigurationError, DataError

log = logging.getLogger(__name__)

MAX_KMEANS_ITERATIONS = 100


@dataclass(frozen=True, eq=False)
class ClusterModel:
    centroids: np.ndarray
    labels: np.ndarray  # cluster index per dataset row
    ids: np.ndarray
    iterations: int

    @property
    def k(self):
        return len(self.centroids)

    def assignment(self):
        return {int(i): int(c) for i, c in zip(self.ids, self.labels)}


def _features(dataset):
    return getattr(dataset, "features", dataset)


def kmeans_cluster(dataset, k, seed):
    """Lloyd's algorithm from ``k`` distinct seeded samples.

    Stops once assignments repeat or after 100 rounds. An empty cluster is
    re-seeded with the point farthest from its current centroid.
    """
    x = np.asarray(_features(dataset), dtype=np.float64)
    n = len(x)
    if k < 2:
        raise ConfigurationError("k must be >= 2")
    if k > n:
        raise DataError(f"k={k} exceeds the {n} available samples")
    rng = np.random.default_rng(seed)
    centroids = x[np.sort(rng.choice(n, size=k, replace=False))].copy()
    labels = None
    it = 0
    for it in range(1, MAX_KMEANS_ITERATIONS + 1):
        d = cdist(x, centroids, "sqeuclidean")
        new = np.argmin(d, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centroids = _update(x, labels, centroids, d)
    else:
        centroids = _update(x, labels, centroids, cdist(x, centroids, "sqeuclidean"))
    ids = getattr(dataset, "ids", np.arange(n))
    return ClusterModel(centroids, labels, np.asarray(ids), it)


def _update(x, labels, centroids, d):
    k = len(centroids)
    out = np.empty_like(centroids)
    own = d[np.arange(len(x)), labels]
    taken = set()
    for c in range(k):
        members = labels == c
        if members.any():
            out[c] = x[members].mean(axis=0)
            continue
        for j in np.argsort(-own, kind="stable"):
            if j not in taken:
                taken.add(j)
                out[c] = x[j]
                break
    return out


def silhouette_values(clusters, dataset):
    """Silhouette of every row; members of singleton clusters get 0."""
    x = np.asarray(_features(dataset), dtype=np.float64)
    labels = clusters.labels
    d = cdist(x, x)
    present = np.unique(labels)
    sums = np.stack([d[:, labels == c].sum(axis=1) for c in present], axis=1)
    sizes = np.array([(labels == c).sum() for c in present])
    pos = np.searchsorted(present, labels)
    own_size = sizes[pos]
    rows = np.arange(len(x))
    with np.errstate(invalid="ignore", divide="ignore"):
        a = sums[rows, pos] / (own_size - 1)
        means = sums / sizes
    means[rows, pos] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    sv = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    sv[own_size < 2] = 0.0
    if len(present) < 2:
        sv[:] = 0.0
    return sv


def silhouette_value(sample_index, clusters, dataset):
    """Silhouette (b - a) / max(a, b) of one row, by direct Euclidean distances."""
    x = np.asarray(_features(dataset), dtype=np.float64)
    labels = clusters.labels
    own = labels[sample_index]
    d = np.sqrt(np.sum((x - x[sample_index]) ** 2, axis=1))
    same = labels == own
    same[sample_index] = False
    if not same.any():
        return 0.0
    a = d[same].mean()
    others = [d[labels == c].mean() for c in np.unique(labels) if c != own]
    if not others:
        return 0.0
    b = min(others)
    top = max(a, b)
    return 0.0 if top == 0 else float((b - a) / top)


def lfa_flip(dataset, k, seed, mask=None):
    """Flip binary labels of every sample whose silhouette is <= 0.

    Returns the relabelled dataset and the ids that were flipped. ``mask``
    optionally restricts which rows may be flipped.
    """
    if dataset.class_count != 2:
        raise ConfigurationError("label flipping is defined for binary labels only")
    clusters = kmeans_cluster(dataset, k, seed)
    sv = silhouette_values(clusters, dataset)
    flip = sv <= 0
    if mask is not None:
        flip &= mask
    labels = np.where(flip, np.abs(1 - dataset.labels), dataset.labels)
    flipped_ids = dataset.ids[flip]
    log.info("label flipping: %d of %d labels flipped", flip.sum(), len(dataset))
    return dataset.replace(labels=labels), flipped_ids
