"""Synthetic binary-classification data, CSV persistence, and train/val splits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .streams import FEATURES, LABEL_NOISE, SPLIT, TRUE_WEIGHTS, stream


class IngestionError(ValueError):
    """A CSV file violated the dataset contract (missing file, bad cell, bad label)."""


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for the synthetic linear-teacher dataset.

    Features are uniform on [-1, 1]^d, teacher weights are standard normal,
    and a label is 1 when the sigmoid of the noisy teacher score exceeds 0.5.
    ``noise_scale`` is the variance of the scalar noise added to the score
    (the default 0.1 corresponds to a standard deviation of sqrt(0.1)).
    """

    n: int
    d: int
    noise_scale: float = 0.1
    split_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"invalid spec: n must be >= 2, got {self.n}")
        if self.d < 1:
            raise ValueError(f"invalid spec: d must be >= 1, got {self.d}")
        if not self.noise_scale >= 0.0:
            raise ValueError(f"invalid spec: noise_scale must be >= 0, got {self.noise_scale}")
        if not 0.0 < self.split_fraction <= 1.0:
            raise ValueError(
                f"invalid spec: split_fraction must be in (0, 1], got {self.split_fraction}"
            )


@dataclass
class Dataset:
    """Feature matrix with binary labels and a fixed train/validation split.

    Immutable after construction: the backing arrays are marked read-only so a
    Dataset can be shared across threads.  ``true_weights`` carries the teacher
    vector for synthetic data and is None for ingested files.
    """

    features: np.ndarray
    labels: np.ndarray
    train_indices: np.ndarray
    val_indices: np.ndarray
    true_weights: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        self.train_indices = np.ascontiguousarray(self.train_indices, dtype=np.int64)
        self.val_indices = np.ascontiguousarray(self.val_indices, dtype=np.int64)
        if self.true_weights is not None:
            self.true_weights = np.ascontiguousarray(self.true_weights, dtype=np.float64)
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise ValueError(f"labels shape {self.labels.shape} does not match n={n}")
        bad = ~np.isin(self.labels, (0, 1))
        if bad.any():
            raise ValueError(f"labels must be 0 or 1; first offender at row {int(np.argmax(bad))}")
        joined = np.sort(np.concatenate([self.train_indices, self.val_indices]))
        if joined.shape != (n,) or not np.array_equal(joined, np.arange(n)):
            raise ValueError("train/val indices must partition 0..n-1 without duplicates")
        for arr in (self.features, self.labels, self.train_indices, self.val_indices):
            arr.setflags(write=False)
        if self.true_weights is not None:
            self.true_weights.setflags(write=False)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @classmethod
    def from_arrays(cls, features, labels, split_fraction=1.0, seed=0, true_weights=None):
        """Wrap in-memory arrays, drawing the split from the given seed."""
        features = np.asarray(features, dtype=np.float64)
        n = features.shape[0]
        train_idx, val_idx = _draw_split(n, split_fraction, stream(seed, SPLIT))
        return cls(features, np.asarray(labels), train_idx, val_idx, true_weights)


def _draw_split(n: int, split_fraction: float, rng: np.random.Generator):
    if not 0.0 < split_fraction <= 1.0:
        raise ValueError(f"split_fraction must be in (0, 1], got {split_fraction}")
    perm = rng.permutation(n)
    if split_fraction == 1.0:
        n_train = n
    else:
        n_train = min(n, max(1, int(round(n * split_fraction))))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def assign_labels(features: np.ndarray, weights: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Label 1 iff sigmoid(w . x + eps) > 0.5, i.e. iff the score is positive."""
    score = features @ weights + noise
    return (score > 0.0).astype(np.int64)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw the synthetic dataset deterministically from ``spec.seed``.

    Features, teacher weights, label noise, and the split permutation come
    from four independent streams, so e.g. changing ``n`` leaves the teacher
    weights untouched.
    """
    features = stream(spec.seed, FEATURES).uniform(-1.0, 1.0, size=(spec.n, spec.d))
    weights = stream(spec.seed, TRUE_WEIGHTS).standard_normal(spec.d)
    noise = stream(spec.seed, LABEL_NOISE).standard_normal(spec.n) * math.sqrt(spec.noise_scale)
    labels = assign_labels(features, weights, noise)
    train_idx, val_idx = _draw_split(spec.n, spec.split_fraction, stream(spec.seed, SPLIT))
    return Dataset(features, labels, train_idx, val_idx, true_weights=weights)


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".split.json")


def save_csv(dataset: Dataset, path) -> None:
    """Write the dataset as CSV plus a sidecar split-index file.

    Floats are written with ``repr`` so a re-read reproduces them bit for bit.
    """
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(dataset.d)] + ["label"])
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            row.append(str(int(dataset.labels[i])))
            writer.writerow(row)
    sidecar = {
        "train_indices": dataset.train_indices.tolist(),
        "val_indices": dataset.val_indices.tolist(),
        "true_weights": None
        if dataset.true_weights is None
        else [repr(float(v)) for v in dataset.true_weights],
    }
    _sidecar_path(path).write_text(json.dumps(sidecar))


def load_csv(path, label_column: str = "label", split_fraction: float = 0.8, seed: int = 0) -> Dataset:
    """Load a CSV dataset; restore the saved split if a sidecar file exists.

    Rows are counted 1-based over data rows (the header is row 0) in error
    messages.  Feature column order is preserved from the file.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file, header required") from None
        if label_column not in header:
            raise IngestionError(f"{path}: no column named {label_column!r} in header")
        label_pos = header.index(label_column)
        feature_pos = [j for j in range(len(header)) if j != label_pos]
        features, labels = [], []
        for i, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise IngestionError(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
            vals = []
            for j in feature_pos:
                try:
                    vals.append(float(row[j]))
                except ValueError:
                    raise IngestionError(
                        f"{path}: non-numeric value {row[j]!r} at row {i}, column {header[j]!r}"
                    ) from None
            try:
                raw_label = float(row[label_pos])
            except ValueError:
                raise IngestionError(
                    f"{path}: non-numeric label {row[label_pos]!r} at row {i}"
                ) from None
            if raw_label not in (0.0, 1.0):
                raise IngestionError(f"{path}: label must be 0 or 1, got {row[label_pos]!r} at row {i}")
            features.append(vals)
            labels.append(int(raw_label))
    if not features:
        raise IngestionError(f"{path}: no data rows")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = features.shape[0]

    sidecar = _sidecar_path(path)
    if sidecar.exists():
        saved = json.loads(sidecar.read_text())
        train_idx = np.asarray(saved["train_indices"], dtype=np.int64)
        val_idx = np.asarray(saved["val_indices"], dtype=np.int64)
        tw = saved.get("true_weights")
        weights = None if tw is None else np.asarray([float(v) for v in tw], dtype=np.float64)
        return Dataset(features, labels, train_idx, val_idx, true_weights=weights)
    train_idx, val_idx = _draw_split(n, split_fraction, stream(seed, SPLIT))
    return Dataset(features, labels, train_idx, val_idx)
