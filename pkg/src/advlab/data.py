"""Datasets, CSV I/O, min-max scaling, 60/20/20 splits, synthetic blobs and the stream view."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, DataError

DEFAULT_BINARY_NAMES = ("benign", "malware")


class Sample(NamedTuple):
    features: np.ndarray
    label: int
    id: int


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of feature rows with integer class labels and unique ids.

    ``label_names[k]`` is the original label string for class id ``k``.
    """

    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    class_count: int
    label_names: tuple = ()
    feature_names: tuple = ()

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim == 1 and x.size == 0:
            x = x.reshape(0, len(self.feature_names))
        if x.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {x.shape}")
        n, m = x.shape
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        if y.shape[0] != n or ids.shape[0] != n:
            raise DataError(f"{n} rows but {y.shape[0]} labels and {ids.shape[0]} ids")
        if self.class_count < 1:
            raise DataError("class_count must be positive")
        if n and (y.min() < 0 or y.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")
        if len(np.unique(ids)) != n:
            raise DataError("sample ids must be unique")
        if not np.all(np.isfinite(x)):
            raise DataError("features must be finite")
        names = tuple(self.feature_names) or tuple(f"f{j}" for j in range(m))
        if len(names) != m:
            raise DataError(f"{len(names)} feature names for {m} features")
        label_names = tuple(self.label_names) or default_label_names(self.class_count)
        object.__setattr__(self, "features", _frozen(x, np.float64))
        object.__setattr__(self, "labels", _frozen(y, np.int64))
        object.__setattr__(self, "ids", _frozen(ids, np.int64))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "label_names", label_names)

    def __len__(self):
        return self.features.shape[0]

    def __getitem__(self, i):
        return Sample(self.features[i], int(self.labels[i]), int(self.ids[i]))

    @property
    def feature_count(self):
        return self.features.shape[1]

    def replace(self, **changes):
        fields = dict(features=self.features, labels=self.labels, ids=self.ids,
                      class_count=self.class_count, label_names=self.label_names,
                      feature_names=self.feature_names)
        fields.update(changes)
        return Dataset(**fields)

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return self.replace(features=self.features[indices], labels=self.labels[indices],
                            ids=self.ids[indices])

    def index_of(self, ids):
        """Row positions for the given sample ids (``-1`` when absent)."""
        lookup = {int(v): i for i, v in enumerate(self.ids)}
        return np.array([lookup.get(int(v), -1) for v in np.atleast_1d(ids)], dtype=np.int64)

    def next_id(self):
        return int(self.ids.max()) + 1 if len(self) else 0

    @staticmethod
    def concat(parts):
        parts = list(parts)
        first = parts[0]
        return first.replace(features=np.vstack([p.features for p in parts]),
                             labels=np.concatenate([p.labels for p in parts]),
                             ids=np.concatenate([p.ids for p in parts]))


def default_label_names(class_count):
    if class_count == 2:
        return DEFAULT_BINARY_NAMES
    return tuple(f"class_{k}" for k in range(class_count))


def empty_dataset(feature_count, class_count=2, label_names=(), feature_names=()):
    return Dataset(np.zeros((0, feature_count)), np.zeros(0, dtype=np.int64),
                   np.zeros(0, dtype=np.int64), class_count, label_names, feature_names)


# -- CSV -------------------------------------------------------------------


def load_csv(path, label_column):
    """Read a header-first CSV; every column except ``label_column`` must be numeric.

    Labels become dense ids in order of first appearance; the original strings
    are kept in ``label_names``.
    """
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row missing") from None
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header {header}")
        li = header.index(label_column)
        feature_names = tuple(h for j, h in enumerate(header) if j != li)
        rows, labels, mapping = [], [], {}
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
            values = []
            for j, cell in enumerate(row):
                if j == li:
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}: row {r}, column {header[j]!r}: "
                                    f"cannot parse {cell!r} as a number") from None
            name = row[li].strip()
            labels.append(mapping.setdefault(name, len(mapping)))
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    names = tuple(mapping)
    class_count = max(len(names), 2)
    names += tuple(f"<unseen_{k}>" for k in range(len(names), class_count))
    return Dataset(np.array(rows), np.array(labels), np.arange(len(rows)), class_count,
                   names, feature_names)


def write_csv(dataset, path, label_column="label", extra_columns=None):
    """Write ``dataset`` in the same layout ``load_csv`` reads, plus optional extra columns."""
    extra_columns = extra_columns or {}
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as handle:
            w = csv.writer(handle, lineterminator="\n")
            w.writerow(list(dataset.feature_names) + [label_column] + list(extra_columns))
            for i in range(len(dataset)):
                row = [repr(float(v)) for v in dataset.features[i]]
                row.append(dataset.label_names[dataset.labels[i]])
                row.extend(str(col[i]) for col in extra_columns.values())
                w.writerow(row)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


# -- scaling ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Scaler:
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        if np.any(self.minimum > self.maximum):
            raise DataError("scaler minimum exceeds maximum")

    def transform_array(self, x):
        span = self.maximum - self.minimum
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (np.asarray(x, dtype=np.float64) - self.minimum) / safe, 0.0)

    def transform(self, dataset):
        return dataset.replace(features=self.transform_array(dataset.features))


def fit_normalize(dataset):
    """Min-max scale every feature to [0, 1]; constant features map to 0."""
    if len(dataset) == 0:
        raise DataError("cannot fit a scaler on an empty dataset")
    scaler = Scaler(dataset.features.min(axis=0), dataset.features.max(axis=0))
    return scaler.transform(dataset), scaler


# -- splitting ---------------------------------------------------------------


def split_sizes(n):
    train = n * 6 // 10
    val = n * 2 // 10
    return train, val, n - train - val


def split(dataset, seed):
    """Seeded shuffle into disjoint 60/20/20 train/validation/test parts."""
    n = len(dataset)
    if n < 5:
        raise DataError(f"need at least 5 samples to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    a, b, _ = split_sizes(n)
    return (dataset.subset(np.sort(order[:a])), dataset.subset(np.sort(order[a:a + b])),
            dataset.subset(np.sort(order[a + b:])))


# -- stream view -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StreamCursor:
    """Temporal view of a dataset: rows ``[0, t)`` are observed, later rows may be perturbed."""

    dataset: Dataset
    observed_count: int

    def __post_init__(self):
        if not 0 <= self.observed_count <= len(self.dataset):
            raise DataError(f"observed_count {self.observed_count} outside [0, {len(self.dataset)}]")

    def perturbable(self, i):
        return i >= self.observed_count

    def perturbable_mask(self):
        mask = np.zeros(len(self.dataset), dtype=bool)
        mask[self.observed_count:] = True
        return mask

    def advance(self, k=1):
        return make_stream(self.dataset, min(self.observed_count + k, len(self.dataset)))


def make_stream(dataset, observed_count):
    return StreamCursor(dataset, int(observed_count))


# -- synthetic data ----------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    samples_per_class: int = 300
    feature_count: int = 20
    separation: float = 6.0
    noise_scale: float = 1.0
    class_count: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.samples_per_class < 1:
            raise ConfigurationError("samples_per_class must be >= 1 (empty class)")
        if self.feature_count < 1:
            raise ConfigurationError("feature_count must be >= 1")
        if not self.separation > 0 or not self.noise_scale > 0:
            raise ConfigurationError("separation and noise_scale must be > 0")
        if not 2 <= self.class_count <= self.feature_count:
            raise ConfigurationError("need 2 <= class_count <= feature_count")


def synth_centroids(config, rng):
    """Random simplex of centroids: every pair exactly ``separation`` apart."""
    c, m = config.class_count, config.feature_count
    # orthonormal directions are pairwise sqrt(2) apart
    basis, _ = np.linalg.qr(rng.normal(size=(m, c)))
    return basis.T * (config.separation / np.sqrt(2.0)) + rng.normal(size=m)


def synth_generate(config):
    """Isotropic Gaussian blobs, one per class, in a seeded random order."""
    rng = np.random.default_rng(config.seed)
    centroids = synth_centroids(config, rng)
    k = config.samples_per_class
    x = np.vstack([centroids[c] + config.noise_scale * rng.normal(size=(k, config.feature_count))
                   for c in range(config.class_count)])
    y = np.repeat(np.arange(config.class_count), k)
    order = rng.permutation(len(y))
    return Dataset(x[order], y[order], np.arange(len(y)), config.class_count)
