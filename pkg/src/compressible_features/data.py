"""Desk-scale datasets: Gaussian class clusters and fixed-length byte records."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DatasetSpec",
    "Dataset",
    "generate_synthetic",
    "load_binary_records",
    "save_binary_records",
    "split",
]


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 10
    dim: int = 64
    train_size: int = 5000
    val_size: int = 1000
    margin: float = 4.0
    seed: int = 0


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    num_classes: int

    @property
    def dim(self) -> int:
        return self.x_train.shape[1]


def generate_synthetic(spec: DatasetSpec = DatasetSpec()) -> Dataset:
    """Isotropic unit-variance clusters around orthogonal class means.

    Class means are ``margin`` times orthonormal directions, so ``margin=0``
    makes every class identical.
    """
    if spec.num_classes < 2 or spec.dim < 1:
        raise ValueError("need at least two classes and one dimension")
    rng = np.random.default_rng(spec.seed)
    k, d = spec.num_classes, spec.dim
    q, _ = np.linalg.qr(rng.standard_normal((max(d, k), max(d, k))))
    means = spec.margin * q[:k, :d]

    def draw(n):
        y = rng.integers(0, k, size=n)
        x = means[y] + rng.standard_normal((n, d))
        return x, y

    x_train, y_train = draw(spec.train_size)
    x_val, y_val = draw(spec.val_size)
    return Dataset(x_train, y_train, x_val, y_val, k)


def split(x: np.ndarray, y: np.ndarray, num_classes: int, val_fraction: float = 1 / 6) -> Dataset:
    """Deterministic split: the last ``val_fraction`` of records are validation."""
    n_val = int(round(len(y) * val_fraction))
    cut = len(y) - n_val
    return Dataset(x[:cut], y[:cut], x[cut:], y[cut:], num_classes)


def load_binary_records(path, dim: int, num_classes: int = 256):
    """Read records of one label byte followed by ``dim`` value bytes.

    Values are scaled to [0, 1]. Returns ``(x, y)``.
    """
    size = os.path.getsize(path)
    record = dim + 1
    if size % record:
        raise ValueError(f"file size {size} is not a multiple of the record length {record}")
    raw = np.fromfile(path, dtype=np.uint8).reshape(-1, record)
    y = raw[:, 0].astype(np.int64)
    if y.size and y.max() >= num_classes:
        raise ValueError(f"label {y.max()} out of range for {num_classes} classes")
    x = raw[:, 1:].astype(np.float64) / 255.0
    return x, y


def save_binary_records(path, x: np.ndarray, y: np.ndarray) -> None:
    """Write features in [0, 1] as bytes, inverse of :func:`load_binary_records`."""
    y = np.asarray(y)
    if y.size and (y.min() < 0 or y.max() > 255):
        raise ValueError("labels must fit in one byte")
    values = np.rint(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    records = np.concatenate([y.astype(np.uint8)[:, None], values.reshape(len(y), -1)], axis=1)
    records.tofile(path)
