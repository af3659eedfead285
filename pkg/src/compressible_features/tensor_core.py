"""Dense layers with hand-written backward passes, Adam, and checkpoint IO.

Arrays are plain ``numpy.ndarray`` in float64. Every layer exposes a pure
``*_forward`` function and a matching ``*_backward`` taking the upstream
gradient, so gradient checks can target each piece on its own.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

import numpy as np

__all__ = [
    "NonFiniteError",
    "check_finite",
    "dense_forward",
    "dense_backward",
    "relu",
    "relu_backward",
    "softmax_cross_entropy",
    "ParamSet",
    "AdamState",
    "adam_step",
    "cosine_decay_lr",
    "weight_decay",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_bytes",
    "checkpoint_from_bytes",
]


class NonFiniteError(FloatingPointError):
    """Raised when a forward or backward pass produces NaN or Inf."""


def check_finite(name: str, x: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {name}")
    return x


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``x @ w + b`` for ``x`` of shape (B, I), ``w`` (I, O) and ``b`` (O,)."""
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise ValueError(f"dense_forward expects 2-D input/weights and 1-D bias, got {x.shape}, {w.shape}, {b.shape}")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: input {x.shape}, weights {w.shape}, bias {b.shape}")
    return x @ w + b


def dense_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray):
    """Returns ``(grad_x, grad_w, grad_b)``."""
    return grad_out @ w.T, x.T @ grad_out, grad_out.sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(x > 0.0, grad_out, 0.0)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross entropy over the batch.

    Returns ``(loss, grad_logits)`` where the gradient is ``(softmax - onehot) / B``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(n)
    loss = -log_probs[rows, labels].mean()
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    grad /= n
    return float(loss), grad


@dataclass
class ParamSet:
    """Named parameters with gradient slots and a step counter."""

    params: Dict[str, np.ndarray] = field(default_factory=dict)
    grads: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value: np.ndarray) -> None:
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self, prefix: str = ""):
        return [n for n in self.params if n.startswith(prefix)]

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParamSet":
        return ParamSet(
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.grads.items()},
            self.step,
        )


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: ParamSet,
    state: AdamState,
    lr: float,
    names: Optional[Iterable[str]] = None,
) -> ParamSet:
    """One bias-corrected Adam update, in place. Increments ``params.step``."""
    params.step += 1
    t = params.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name in params.params if names is None else names:
        g = params.grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        params.params[name] -= update
    return params


def cosine_decay_lr(step: int, total_steps: int, lr0: float) -> float:
    if step < 0 or step > total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return lr0
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def weight_decay(params: ParamSet, coefficient: float, names: Iterable[str]) -> None:
    """Add ``coefficient * w`` to the gradient of each named weight."""
    if coefficient < 0:
        raise ValueError("weight decay coefficient must be non-negative")
    if coefficient == 0:
        return
    for name in names:
        params.grads[name] += coefficient * params.params[name]


# -- checkpoint file ("CFCK") -------------------------------------------------

CHECKPOINT_MAGIC = b"CFCK"
CHECKPOINT_VERSION = 1


def checkpoint_bytes(tensors: Dict[str, np.ndarray]) -> bytes:
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC)
    out.write(struct.pack("<HI", CHECKPOINT_VERSION, len(tensors)))
    for name, value in tensors.items():
        value = np.asarray(value, dtype="<f8")
        raw_name = name.encode("utf-8")
        out.write(struct.pack("<I", len(raw_name)))
        out.write(raw_name)
        out.write(struct.pack("<I", value.ndim))
        out.write(struct.pack(f"<{value.ndim}Q", *value.shape))
        out.write(np.ascontiguousarray(value).tobytes())
    return out.getvalue()


def checkpoint_from_bytes(data: bytes) -> Dict[str, np.ndarray]:
    view = memoryview(data)
    if bytes(view[:4]) != CHECKPOINT_MAGIC:
        raise ValueError("not a CFCK checkpoint")
    version, count = struct.unpack_from("<HI", view, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 10
    tensors: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", view, pos)
            pos += 4
            name = bytes(view[pos : pos + name_len]).decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", view, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", view, pos)
            pos += 8 * rank
            size = int(np.prod(shape, dtype=np.int64)) * 8
            if pos + size > len(view):
                raise ValueError("truncated checkpoint")
            tensors[name] = np.frombuffer(view[pos : pos + size], dtype="<f8").reshape(shape).astype(np.float64)
            pos += size
    except struct.error as exc:
        raise ValueError("truncated checkpoint") from exc
    if pos != len(view):
        raise ValueError("trailing bytes after checkpoint")
    return tensors


def save_checkpoint(path, tensors: Dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(tensors))


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return checkpoint_from_bytes(f.read())
