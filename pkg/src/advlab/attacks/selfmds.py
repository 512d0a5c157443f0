"""Streaming self-supervised attack.

Samples arrive in stream order. An arriving sample that lies within
``match_threshold`` of some earlier sample is a match; every match is pushed
one signed-gradient step along the input gradient of a self-supervised loss
whose pseudo-label is the sample's self-attention target.
"""

from __future__ import annotations

import numpy as np

from ..data import StreamCursor, make_stream
from ..errors import DataError, StateError
from .base import derived_set, empty_perturbed, sign


def attention_weights(x_i, context, sigma):
    d2 = np.sum((np.asarray(context, dtype=np.float64) - x_i) ** 2, axis=1)
    return np.exp(-d2 / (2.0 * sigma ** 2))


def self_attention_target(x_i, context, sigma):
    """Kernel-weighted mean of ``context`` (which must contain ``x_i``) added to ``x_i``."""
    x_i = np.asarray(x_i, dtype=np.float64)
    context = np.atleast_2d(np.asarray(context, dtype=np.float64))
    if context.shape[0] == 0 or context.size == 0:
        raise DataError("self-attention needs a nonempty context")
    w = attention_weights(x_i, context, sigma)
    return (w @ context) / w.sum() + x_i


def target_representation_gradient(model, x, targets):
    """Input gradient of sum_i ||h(x_i) - h(t_i)||^2, with h the pre-softmax output.

    The targets are pseudo-labels, so no gradient flows through them.
    """
    stop = len(model.layers) - 1 if model.ends_in_softmax else None
    h_x, caches = model.forward_cached(x, stop)
    h_t = model.forward_cached(targets, stop)[0]
    _, grad = model.backprop(caches, 2.0 * (h_x - h_t), np.shape(x))
    return grad


def match_stream(features, observed_count, threshold):
    """Split arrivals into matched (O) and unmatched (S) index lists.

    An arrival matches when its nearest earlier sample (observed or arrived)
    lies within ``threshold`` in Euclidean distance.
    """
    matched, unmatched = [], []
    for i in range(observed_count, len(features)):
        if i == 0:
            unmatched.append(i)
            continue
        d = np.sqrt(np.sum((features[:i] - features[i]) ** 2, axis=1))
        (matched if d.min() <= threshold else unmatched).append(i)
    return matched, unmatched


def self_mds_attack(stream, model, config):
    if not model.layers:
        raise StateError("self_mds_attack needs a trained model")
    if not isinstance(stream, StreamCursor):
        stream = make_stream(stream, 0)
    ds = stream.dataset
    x = ds.features
    matched, unmatched = match_stream(x, stream.observed_count, config.match_threshold)
    diagnostics = {"matched": [int(ds.ids[i]) for i in matched],
                   "unmatched": [int(ds.ids[i]) for i in unmatched]}
    if not matched:
        return empty_perturbed(ds, diagnostics)
    # each match sees the running view up to and including itself
    targets = np.vstack([self_attention_target(x[i], x[:i + 1], config.sigma)
                         for i in matched])
    rows = np.asarray(matched)
    grad = target_representation_gradient(model, x[rows], targets)
    new = config.clip(x[rows] + config.kappa * sign(grad))
    return derived_set(ds, new, ds.labels[rows], rows, "Self-MDS", diagnostics=diagnostics)
