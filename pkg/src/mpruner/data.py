"""Synthetic datasets and a CSV ingester, each split train/validation/eval."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

SPLITS = ("train", "validation", "eval")


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: np.ndarray  # per-sample index into SPLITS
    num_classes: int

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        mask = self.split == SPLITS.index(name)
        return self.inputs[mask], self.labels[mask]

    def size(self, name: str) -> int:
        return int(np.sum(self.split == SPLITS.index(name)))


def _split_tags(n: int, rng: np.random.Generator) -> np.ndarray:
    n_val = int(round(0.1 * n))
    n_eval = int(round(0.1 * n))
    n_train = n - n_val - n_eval
    if n_train < 1:
        raise InvalidArgumentError(f"{n} samples leave no training split")
    tags = np.repeat(np.arange(3), [n_train, n_val, n_eval])
    return tags[rng.permutation(n)]


def _gaussian_clusters(n, input_dim, num_classes, rng, separation):
    directions = rng.normal(size=(num_classes, input_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    labels = np.arange(n) % num_classes
    inputs = directions[labels] * separation + rng.normal(size=(n, input_dim))
    return inputs, labels


def _ring_xor(n, input_dim, num_classes, rng, separation):
    if input_dim < 2:
        raise InvalidArgumentError("ring_xor needs input_dim >= 2")
    inputs = rng.uniform(-1.0, 1.0, size=(n, input_dim))
    radius = np.hypot(inputs[:, 0], inputs[:, 1])
    ring = np.minimum((radius / np.sqrt(2.0) * num_classes).astype(int), num_classes - 1)
    parity = (inputs[:, 0] > 0) ^ (inputs[:, 1] > 0)
    labels = (ring + parity.astype(int)) % num_classes
    return inputs * separation, labels


_GENERATORS = {"gaussian_clusters": _gaussian_clusters, "ring_xor": _ring_xor}


def make_synthetic_dataset(
    kind: str,
    n: int,
    input_dim: int,
    num_classes: int,
    seed: int = 0,
    separation: float = 4.0,
) -> Dataset:
    """Deterministic synthetic classification data with an 80/10/10 split.

    ``separation`` is the distance of each Gaussian class mean from the origin
    (for ``ring_xor`` it rescales the inputs).
    """
    if kind not in _GENERATORS:
        raise InvalidArgumentError(f"unknown dataset kind {kind!r}; choose from {sorted(_GENERATORS)}")
    if input_dim < 1 or num_classes < 1 or n < num_classes:
        raise InvalidArgumentError(f"invalid sizes n={n}, input_dim={input_dim}, num_classes={num_classes}")
    rng = np.random.default_rng(seed)
    inputs, labels = _GENERATORS[kind](n, input_dim, num_classes, rng, separation)
    split = _split_tags(n, rng)
    return Dataset(inputs.astype(np.float32), labels.astype(np.int64), split, num_classes)


def load_csv(path, label_column: int = -1, seed: int = 0, num_classes: int | None = None) -> Dataset:
    """Numeric CSV (optional header row) with one integer label column."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and not _is_numeric(rows[0]):
        rows = rows[1:]
    if not rows:
        raise InvalidArgumentError(f"{path} has no data rows")
    table = np.array(rows, dtype=np.float64)
    labels = table[:, label_column].astype(np.int64)
    inputs = np.delete(table, label_column % table.shape[1], axis=1)
    if labels.min() < 0:
        raise InvalidArgumentError("labels must be non-negative integers")
    classes = num_classes or int(labels.max()) + 1
    rng = np.random.default_rng(seed)
    return Dataset(inputs.astype(np.float32), labels, _split_tags(len(labels), rng), classes)


def _is_numeric(row) -> bool:
    try:
        [float(c) for c in row]
    except ValueError:
        return False
    return True


def seed_batches(data: Dataset, num_batches: int = 8, batch_size: int = 32, seed: int = 0) -> list[np.ndarray]:
    """First ``num_batches`` batches of the shuffled validation split."""
    x, _ = data.subset("validation")
    order = np.random.default_rng(seed).permutation(len(x))
    batches = [x[order[i:i + batch_size]] for i in range(0, len(x), batch_size)]
    batches = [b for b in batches if len(b) >= 2][:num_batches]
    if not batches:
        raise InvalidArgumentError("validation split too small to form a seed batch")
    return batches
