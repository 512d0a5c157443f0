"""FGSM and JSMA on the engine's classifiers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import sign


@dataclass(frozen=True, eq=False)
class SaliencyResult:
    jacobian: np.ndarray  # (classes, features): d prob_k / d x_l
    chosen_feature: int


def probability_jacobian(model, x):
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    probs, caches = model.forward_cached(x)
    rows = []
    for k in range(probs.shape[1]):
        seed = np.zeros_like(probs)
        seed[0, k] = 1.0
        rows.append(model.backprop(caches, seed, x.shape)[1][0])
    return np.vstack(rows)


def select_feature(target_gradient, x, clip_low, excluded=None):
    """Largest positive target-class gradient among features sitting at ``clip_low``.

    Falls back to the argmax over every non-excluded feature when none
    qualifies. Ties go to the lowest index.
    """
    g = np.asarray(target_gradient, dtype=np.float64)
    allowed = np.ones(len(g), dtype=bool) if excluded is None else ~np.asarray(excluded)
    qualifying = allowed & (np.asarray(x) <= clip_low) & (g > 0)
    pool = qualifying if qualifying.any() else allowed
    return int(np.argmax(np.where(pool, g, -np.inf)))


def jsma_select_feature(model, x, target_class, clip_low=0.0, excluded=None):
    jac = probability_jacobian(model, x)
    return SaliencyResult(jac, select_feature(jac[target_class], np.ravel(x), clip_low, excluded))


def jsma_perturb(model, x, y_true, config):
    """Raise one salient feature by ``step_size`` at a time until the label flips."""
    x = np.array(x, dtype=np.float64).reshape(-1)
    target = 1 - int(y_true)
    for _ in range(config.max_feature_changes):
        if model.predict(x)[0] != y_true:
            break
        saturated = x >= config.clip_high
        if saturated.all():
            break
        k = jsma_select_feature(model, x, target, config.clip_low, saturated).chosen_feature
        x[k] = min(x[k] + config.step_size, config.clip_high)
    return x


def fgsm_perturb(model, x, y_true, epsilon, clip_low=0.0, clip_high=1.0):
    """One signed-gradient ascent step on cross-entropy, clipped to the box.

    Accepts a single sample or a batch.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x.reshape(1, -1) if single else x
    labels = np.atleast_1d(np.asarray(y_true, dtype=np.int64))
    if epsilon == 0:
        out = batch.copy()
    else:
        grad = model.gradients(batch, labels).input_grads
        out = np.clip(batch + epsilon * sign(grad), clip_low, clip_high)
        # rounding in x + eps can overshoot the budget by an ulp; step back inside
        over = np.abs(out - batch) > epsilon
        while over.any():
            out[over] = np.nextafter(out[over], batch[over])
            over = np.abs(out - batch) > epsilon
    return out[0] if single else out
