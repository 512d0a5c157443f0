"""Adversarial self-training defence.

For every batch of perturbed samples the model sees two views: the batch
itself and a copy shifted by seeded uniform noise in ``[-budget, budget]``.
Their pre-softmax outputs are pulled together (consistency) while a supervised
cross-entropy keeps the decision anchored to trusted labels.

Trusted labels come from ``base_train``: a perturbed sample whose source id
is found there is trained on its source's label, and each step also draws a
batch of ``base_train`` itself. Generated samples with no source take part in
the consistency term only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, write_csv
from .errors import ConfigurationError, DataError, StateError, TrainingDivergedError

log = logging.getLogger(__name__)

PERTURBED, GENERATED = "perturbed", "defence-generated"


@dataclass(frozen=True)
class DefenceConfig:
    iterations: int = 20
    learning_rate: float = 0.05
    batch_size: int = 16
    perturbation_budget: float = 0.05
    seed: int = 0
    consistency_weight: float = 1.0
    supervised_weight: float = 1.0

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        for name in ("learning_rate", "perturbation_budget"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0")
        if self.consistency_weight < 0 or self.supervised_weight < 0:
            raise ConfigurationError("loss weights must be >= 0")


@dataclass(frozen=True, eq=False)
class DefenceResult:
    model: object
    corrected: Dataset
    origin: tuple  # PERTURBED or GENERATED per corrected row
    consistency: list = field(default_factory=list)  # mean per epoch
    loss: list = field(default_factory=list)

    def write_csv(self, path, label_column="label"):
        write_csv(self.corrected, path, label_column, {"origin": list(self.origin)})


def _trusted_labels(perturbed, base_train):
    rows = base_train.index_of(perturbed.source_ids)
    known = rows >= 0
    labels = np.full(len(rows), -1, dtype=np.int64)
    labels[known] = base_train.labels[rows[known]]
    return labels


def _step(model, x_per, x_adv, sup_x, sup_y, config):
    """One update; returns (total loss, consistency term)."""
    n = len(x_per)
    stop = len(model.layers) - 1 if model.ends_in_softmax else None
    p_adv, c_adv = model.forward_cached(x_adv, stop)
    p_per, c_per = model.forward_cached(x_per, stop)
    diff = p_adv - p_per
    consistency = float(np.mean(np.sum(diff ** 2, axis=1)))
    g = 2.0 * config.consistency_weight * diff / n
    grads_adv, _ = model.backprop(c_adv, g)
    grads_per, _ = model.backprop(c_per, -g)
    total = [None if a is None else (a[0] + b[0], a[1] + b[1])
             for a, b in zip(grads_adv, grads_per)]
    loss = config.consistency_weight * consistency
    if len(sup_y) and config.supervised_weight > 0:
        sup = model.gradients(sup_x, sup_y)
        w = config.supervised_weight
        total = [None if a is None else (a[0] + w * b[0], a[1] + w * b[1])
                 for a, b in zip(total, sup.param_grads)]
        loss += w * sup.loss
    model.apply_gradients(total, config.learning_rate)
    return loss, consistency


def self_train(perturbed, base_train, model, config):
    """Harden ``model`` on ``perturbed`` and build the corrected dataset."""
    if not model.layers:
        raise StateError("the defence needs a trained model")
    if len(perturbed) == 0:
        raise DataError("the defence needs a nonempty perturbed set")
    model = model.copy()
    x = np.asarray(perturbed.samples.features, dtype=np.float64)
    trusted = _trusted_labels(perturbed, base_train)
    n = len(x)
    rng = np.random.default_rng(config.seed)
    history, losses = [], []
    last_adv = x
    for epoch in range(config.iterations):
        order = rng.permutation(n)
        adv_rows = np.empty_like(x)
        sums = 0.0
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            noise_rng = np.random.default_rng(rng.integers(2 ** 63))
            x_adv = x[idx] + noise_rng.uniform(-config.perturbation_budget,
                                               config.perturbation_budget, x[idx].shape)
            adv_rows[idx] = x_adv
            known = idx[trusted[idx] >= 0]
            anchor = rng.choice(len(base_train), size=min(config.batch_size, len(base_train)),
                                replace=False) if len(base_train) else np.zeros(0, np.int64)
            sup_x = np.vstack([x[known], base_train.features[anchor]])
            sup_y = np.concatenate([trusted[known], base_train.labels[anchor]])
            loss, consistency = _step(model, x[idx], x_adv, sup_x, sup_y, config)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, loss, where="self-training defence")
            sums += consistency * len(idx)
            total += loss * len(idx)
        history.append(sums / n)
        losses.append(total / n)
        last_adv = adv_rows
    samples = perturbed.samples
    if config.iterations == 0:
        return DefenceResult(model, samples, (PERTURBED,) * n, history, losses)
    start_id = max(samples.next_id(), base_train.next_id())
    generated = samples.replace(features=last_adv, ids=np.arange(start_id, start_id + n))
    corrected = Dataset.concat([samples, generated])
    log.info("defence: %d epochs, consistency %.4g -> %.4g", config.iterations,
             history[0], history[-1])
    return DefenceResult(model, corrected, (PERTURBED,) * n + (GENERATED,) * n,
                         history, losses)


def self_train_defence(perturbed, base_train, model, config):
    """Returns ``(hardened model, X_Corrected)``."""
    result = self_train(perturbed, base_train, model, config)
    return result.model, result.corrected


__all__ = ["DefenceConfig", "DefenceResult", "self_train", "self_train_defence",
           "PERTURBED", "GENERATED"]
