"""Composite attack: LFA / JSMA / FGSM followed by signed-gradient refinement."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, StateError
from .base import derived_set, empty_perturbed, sign, unpack_stream
from .clustering import lfa_flip
from .gradient import fgsm_perturb, jsma_perturb

PERTURBERS = ("LFA", "JSMA", "FGSM")


def _check_perturbers(perturbers):
    perturbers = [p.upper() for p in perturbers]
    if not perturbers:
        raise ConfigurationError("aself_mds_attack needs at least one perturber")
    bad = [p for p in perturbers if p not in PERTURBERS]
    if bad or len(set(perturbers)) != len(perturbers):
        raise ConfigurationError(f"perturbers must be distinct members of {PERTURBERS}, got {perturbers}")
    return perturbers


def aself_mds_attack(train_set, model, config, perturbers):
    """Perturb every perturbable sample of ``train_set`` (a Dataset or StreamCursor).

    Label flipping runs once over the whole set; JSMA and FGSM then run per
    sample in the given order. Each candidate then takes ``t_iterations``
    clipped steps of ``kappa * sign(grad_x loss)``, the loss being
    cross-entropy against the sample's current label.
    """
    perturbers = _check_perturbers(perturbers)
    if not model.layers:
        raise StateError("aself_mds_attack needs a trained model")
    ds, mask = unpack_stream(train_set)
    if config.t_iterations == 0 or not mask.any():
        return empty_perturbed(ds)
    kind = "ASelf-MDS-" + "+".join(perturbers)
    labels = ds.labels
    diagnostics = {}
    if "LFA" in perturbers:
        flipped, flipped_ids = lfa_flip(ds, config.lfa_clusters, config.seed, mask)
        labels = flipped.labels
        diagnostics["flipped"] = [int(i) for i in flipped_ids]
    rows = np.flatnonzero(mask)
    x = np.array(ds.features[rows])
    y = np.asarray(labels[rows])
    for p in perturbers:
        if p == "JSMA":
            x = np.vstack([jsma_perturb(model, xi, yi, config) for xi, yi in zip(x, y)])
        elif p == "FGSM":
            x = fgsm_perturb(model, x, y, config.epsilon, config.clip_low, config.clip_high)
    for _ in range(config.t_iterations):
        if config.kappa == 0:
            break
        grad = model.gradients(x, y).input_grads
        x = config.clip(x + config.kappa * sign(grad))
    x = config.clip(x)
    succeeded = model.predict(x) != ds.labels[rows]
    return derived_set(ds, x, y, rows, kind, succeeded, diagnostics)
