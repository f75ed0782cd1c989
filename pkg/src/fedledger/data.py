"""Synthetic dataset generation, CSV ingestion, and non-IID client partitions.

The synthetic generator places one Gaussian cluster per class; cluster means
sit ``class_separation`` away from the origin in seeded random directions, so
separation 0 collapses every class onto the same distribution. Client shards
are produced with the usual per-class Dirichlet label-skew scheme.

CSV schema (the only ingestion format): header ``f0,...,f{m-1},label``; one
row per sample, float64 features, non-negative integer label.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class CsvFormatError(ValueError):
    """Malformed dataset file; the message names the offending line."""


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)
        if inputs.ndim != 2 or labels.ndim != 1 or inputs.shape[0] != labels.shape[0]:
            raise ValueError("inputs/labels shape mismatch")
        if inputs.shape[0] == 0:
            raise ValueError("empty dataset")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError("labels out of range")
        if not np.all(np.isfinite(inputs)):
            raise ValueError("inputs contain non-finite values")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.inputs[indices], self.labels[indices], self.num_classes)


@dataclass(frozen=True)
class ClientPartition:
    """Disjoint index shards over a dataset's samples."""

    shards: tuple[np.ndarray, ...]
    num_samples: int

    def __post_init__(self):
        seen = np.concatenate([np.asarray(s, dtype=np.int64) for s in self.shards])
        if len(self.shards) == 0 or any(len(s) == 0 for s in self.shards):
            raise ValueError("every shard must be non-empty")
        if len(np.unique(seen)) != len(seen):
            raise ValueError("shards overlap")
        if len(seen) != self.num_samples:
            raise ValueError("shards do not cover the dataset")

    @property
    def num_clients(self) -> int:
        return len(self.shards)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.shards)


def generate_synthetic(
    num_samples: int,
    num_classes: int,
    input_dim: int,
    class_separation: float,
    seed: int,
) -> Dataset:
    """Gaussian class clusters; deterministic per seed."""
    if num_classes < 1 or num_samples < num_classes:
        raise ValueError("need num_samples >= num_classes >= 1")
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    if class_separation < 0:
        raise ValueError("class_separation must be >= 0")

    rng = np.random.default_rng([seed, 0x5EED])
    directions = rng.standard_normal((num_classes, input_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = class_separation * directions

    labels = rng.integers(0, num_classes, num_samples)
    # Guarantee every class appears at least once.
    counts = np.bincount(labels, minlength=num_classes)
    for c in np.flatnonzero(counts == 0):
        donor = int(np.argmax(counts))
        idx = int(np.flatnonzero(labels == donor)[-1])
        labels[idx] = c
        counts[donor] -= 1
        counts[c] += 1

    inputs = means[labels] + rng.standard_normal((num_samples, input_dim))
    return Dataset(inputs, labels, num_classes)


def train_test_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle split; the test portion is meant to stay global."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng([seed, 0x5B117])
    order = rng.permutation(len(dataset))
    n_test = max(1, int(round(test_fraction * len(dataset))))
    if n_test >= len(dataset):
        raise ValueError("test fraction leaves no training data")
    return dataset.subset(order[n_test:]), dataset.subset(order[:n_test])


def partition(dataset: Dataset, num_clients: int, dirichlet_beta: float, seed: int) -> ClientPartition:
    """Label-skewed shards via per-class Dirichlet(beta) allocation.

    Deterministic per seed; shards are disjoint, exhaustive, and re-balanced
    so every client ends up with at least one sample.
    """
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    if dirichlet_beta <= 0:
        raise ValueError("dirichlet_beta must be > 0")
    n = len(dataset)
    if num_clients > n:
        raise ValueError(f"cannot split {n} samples across {num_clients} clients")

    rng = np.random.default_rng([seed, 0xD117])
    shards: list[list[int]] = [[] for _ in range(num_clients)]
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        if len(idx) == 0:
            continue
        idx = rng.permutation(idx)
        props = rng.dirichlet([dirichlet_beta] * num_clients)
        # Largest-remainder rounding so the counts sum exactly to len(idx).
        raw = props * len(idx)
        counts = np.floor(raw).astype(np.int64)
        short = len(idx) - int(counts.sum())
        if short > 0:
            order = np.argsort(-(raw - counts), kind="stable")
            counts[order[:short]] += 1
        start = 0
        for k in range(num_clients):
            shards[k].extend(idx[start : start + counts[k]].tolist())
            start += counts[k]

    arrays = [np.sort(np.asarray(s, dtype=np.int64)) for s in shards]
    # Re-balance: donate from the largest shard until no shard is empty.
    while any(len(a) == 0 for a in arrays):
        empty = min(k for k, a in enumerate(arrays) if len(a) == 0)
        donor = int(np.argmax([len(a) for a in arrays]))
        arrays[empty] = arrays[donor][-1:]
        arrays[donor] = arrays[donor][:-1]
    return ClientPartition(tuple(arrays), n)


def save_csv(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    dim = dataset.input_dim
    header = ",".join([f"f{j}" for j in range(dim)] + ["label"])
    with path.open("w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row, label in zip(dataset.inputs, dataset.labels):
            fh.write(",".join(repr(float(v)) for v in row) + f",{label}\n")


def load_csv(path: str | Path) -> Dataset:
    """Parse the documented CSV schema; rejects non-finite values."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CsvFormatError(f"{path}: empty dataset")
    header = lines[0].split(",")
    if header[-1] != "label" or any(h != f"f{j}" for j, h in enumerate(header[:-1])):
        raise CsvFormatError(f"{path}: line 1: bad header {lines[0]!r}")
    dim = len(header) - 1
    if dim < 1:
        raise CsvFormatError(f"{path}: line 1: no feature columns")

    rows = []
    labels = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != dim + 1:
            raise CsvFormatError(f"{path}: line {lineno}: expected {dim + 1} fields")
        try:
            feats = [float(v) for v in fields[:-1]]
        except ValueError as exc:
            raise CsvFormatError(f"{path}: line {lineno}: {exc}") from None
        if not all(np.isfinite(feats)):
            raise CsvFormatError(f"{path}: line {lineno}: non-finite feature value")
        try:
            label = int(fields[-1])
        except ValueError:
            raise CsvFormatError(f"{path}: line {lineno}: label {fields[-1]!r} is not an integer") from None
        if label < 0:
            raise CsvFormatError(f"{path}: line {lineno}: label {label} out of range")
        rows.append(feats)
        labels.append(label)

    if not rows:
        raise CsvFormatError(f"{path}: empty dataset")
    labels_arr = np.asarray(labels, dtype=np.int64)
    return Dataset(np.asarray(rows), labels_arr, int(labels_arr.max()) + 1)
