"""Attack configuration and the PerturbedSet container every attack returns."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from ..data import Dataset, StreamCursor, empty_dataset, write_csv
from ..errors import ConfigurationError, DataError

PERTURBER_KINDS = ("Self-MDS", "GSelf-MDS", "LFA", "JSMA", "FGSM")


@dataclass(frozen=True)
class AttackConfig:
    kappa: float = 0.1
    epsilon: float = 0.1
    t_iterations: int = 2
    step_size: float = 0.1
    max_feature_changes: int = 10
    sigma: float = 0.5
    clip_low: float = 0.0
    clip_high: float = 1.0
    match_threshold: float = 1.0
    lfa_clusters: int = 4
    seed: int = 0

    def __post_init__(self):
        if not self.clip_low < self.clip_high:
            raise ConfigurationError("clip_low must be < clip_high")
        for name in ("sigma", "step_size"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0")
        # zero is a meaningful no-op for these budgets
        for name in ("kappa", "epsilon", "match_threshold"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.t_iterations < 0 or self.max_feature_changes < 0:
            raise ConfigurationError("iteration budgets must be >= 0")
        if self.lfa_clusters < 2:
            raise ConfigurationError("lfa_clusters must be >= 2")

    def clip(self, x):
        return np.clip(x, self.clip_low, self.clip_high)


@dataclass(frozen=True, eq=False)
class PerturbedSet:
    """Attack output: the perturbed samples plus one provenance record per sample.

    ``source_ids[i]`` is the id of the sample row ``i`` was derived from, or
    ``-1`` for freshly generated samples.
    """

    samples: Dataset
    source_ids: np.ndarray
    perturbers: tuple
    linf_norms: np.ndarray
    l2_norms: np.ndarray = None
    succeeded: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.samples)
        src = np.asarray(self.source_ids, dtype=np.int64).reshape(-1)
        linf = np.asarray(self.linf_norms, dtype=np.float64).reshape(-1)
        l2 = linf if self.l2_norms is None else np.asarray(self.l2_norms, dtype=np.float64)
        if len(src) != n or len(linf) != n or len(self.perturbers) != n or len(l2) != n:
            raise DataError("provenance must cover every perturbed sample")
        object.__setattr__(self, "source_ids", src)
        object.__setattr__(self, "linf_norms", linf)
        object.__setattr__(self, "l2_norms", np.asarray(l2, dtype=np.float64))
        object.__setattr__(self, "perturbers", tuple(self.perturbers))

    def __len__(self):
        return len(self.samples)

    def provenance(self):
        out = []
        for i in range(len(self)):
            rec = {"id": int(self.samples.ids[i]), "source_id": int(self.source_ids[i]),
                   "perturber": self.perturbers[i], "linf_norm": float(self.linf_norms[i]),
                   "l2_norm": float(self.l2_norms[i])}
            if self.succeeded is not None:
                rec["succeeded"] = bool(self.succeeded[i])
            out.append(rec)
        return out

    def apply_to(self, dataset):
        """Copy of ``dataset`` with every derived sample written over its source row."""
        x = np.array(dataset.features)
        y = np.array(dataset.labels)
        rows = dataset.index_of(self.source_ids)
        keep = rows >= 0
        x[rows[keep]] = self.samples.features[keep]
        y[rows[keep]] = self.samples.labels[keep]
        return dataset.replace(features=x, labels=y)

    def write_csv(self, path, label_column="label"):
        write_csv(self.samples, path, label_column, {
            "source_id": [int(s) for s in self.source_ids],
            "perturber": list(self.perturbers),
            "linf_norm": [repr(float(v)) for v in self.linf_norms],
        })

    def write_provenance(self, path):
        report = {str(rec.pop("id")): rec for rec in self.provenance()}
        Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")


def empty_perturbed(like, diagnostics=None):
    samples = empty_dataset(like.feature_count, like.class_count, like.label_names,
                            like.feature_names)
    return PerturbedSet(samples, [], (), [], diagnostics=diagnostics or {})


def derived_set(original, new_features, new_labels, rows, kind, succeeded=None,
                diagnostics=None):
    """PerturbedSet for rows ``rows`` of ``original`` replaced by ``new_features``."""
    rows = np.asarray(rows, dtype=np.int64)
    delta = new_features - original.features[rows]
    samples = original.subset(rows).replace(features=new_features, labels=new_labels)
    return PerturbedSet(
        samples, original.ids[rows], (kind,) * len(rows),
        np.abs(delta).max(axis=1) if len(rows) else np.zeros(0),
        np.sqrt((delta ** 2).sum(axis=1)) if len(rows) else np.zeros(0),
        succeeded, diagnostics or {})


def unpack_stream(data):
    """Accept a Dataset (everything perturbable) or a StreamCursor."""
    if isinstance(data, StreamCursor):
        return data.dataset, data.perturbable_mask()
    return data, np.ones(len(data), dtype=bool)


def sign(v):
    """Elementwise sign with sign(0) = 0."""
    return np.sign(np.asarray(v, dtype=np.float64))
