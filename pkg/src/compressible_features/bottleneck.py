"""Entropy bottleneck: rounding at eval, noise for the rate, straight-through for the head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .entropy_model import RateReport

__all__ = [
    "BottleneckConfig",
    "LossReport",
    "quantize",
    "round_half_away",
    "noise_rng",
    "train_forward",
    "straight_through_backward",
    "combined_loss",
]

INT32_MAX = 2**31 - 1


@dataclass(frozen=True)
class BottleneckConfig:
    lam: float
    channels: int

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.channels < 1:
            raise ValueError("channels must be positive")


@dataclass
class LossReport:
    task_loss: float
    rate_bits: float
    total: float


def round_half_away(z: np.ndarray) -> np.ndarray:
    """Round to nearest, ties away from zero (float output)."""
    z = np.asarray(z, dtype=np.float64)
    return np.copysign(np.floor(np.abs(z) + 0.5), z)


def quantize(z: np.ndarray) -> np.ndarray:
    """Round features to int64 symbols in the signed 32-bit range."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("cannot quantize non-finite features")
    q = round_half_away(z)
    if q.size and np.abs(q).max() > INT32_MAX:
        raise OverflowError("quantized value exceeds the signed 32-bit symbol range")
    return q.astype(np.int64)


def noise_rng(seed: int, step: int) -> np.random.Generator:
    """Per-step noise stream, independent of every other stream in a run."""
    return np.random.default_rng([seed, step, 1])


def train_forward(z: np.ndarray, rng: np.random.Generator):
    """Training-time split of ``z`` into ``(z_for_rate, z_for_head)``.

    ``z_for_rate`` carries additive Uniform(-1/2, 1/2) noise. ``z_for_head``
    is rounded; its backward pass is the identity (see
    :func:`straight_through_backward`).
    """
    u = rng.uniform(-0.5, 0.5, size=np.shape(z))
    return z + u, round_half_away(z)


def straight_through_backward(grad_head: np.ndarray) -> np.ndarray:
    return grad_head


def combined_loss(task_loss: float, rate: RateReport, config: BottleneckConfig, batch_size: int = 1) -> LossReport:
    """``L + lambda * R`` with ``R`` taken per example (``rate.total_bits / batch_size``).

    Task losses are batch means, so the rate is averaged the same way.
    """
    if rate.total_bits < 0:
        raise ValueError("rate must be non-negative")
    bits = rate.total_bits / batch_size
    return LossReport(task_loss, bits, task_loss + config.lam * bits)
