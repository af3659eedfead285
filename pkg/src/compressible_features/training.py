"""MLP classifier with an entropy bottleneck on its last hidden layer."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, replace
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .bottleneck import (
    BottleneckConfig,
    LossReport,
    combined_loss,
    noise_rng,
    quantize,
    straight_through_backward,
    train_forward,
)
from .codec import ProbabilityTable, build_tables
from .data import Dataset
from .entropy_model import FactorizedDensity
from .tensor_core import (
    AdamState,
    NonFiniteError,
    ParamSet,
    adam_step,
    check_finite,
    checkpoint_bytes,
    checkpoint_from_bytes,
    cosine_decay_lr,
    dense_backward,
    dense_forward,
    relu,
    relu_backward,
    softmax_cross_entropy,
    weight_decay,
)

__all__ = [
    "TrainConfig",
    "Model",
    "TrainingDiverged",
    "init_network",
    "features_forward",
    "features_backward",
    "train_model",
    "train_classifier",
    "objective_gradients",
]

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    hidden: Sequence[int] = (128, 128)
    lam: float = 0.0
    lr0: float = 0.005
    steps: int = 5000
    batch: int = 128
    seed: int = 0
    weight_decay: float = 1e-4
    # with lam == 0 the bottleneck is bypassed entirely (plain classifier)
    skip_rate_when_zero: bool = True

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


def _num_layers(params: ParamSet) -> int:
    return len(params.names("net/w"))


def init_network(params: ParamSet, sizes: Sequence[int], rng: np.random.Generator) -> None:
    """He-normal weights, zero biases, for layer widths ``sizes``."""
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        params.add(f"net/w{i}", rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        params.add(f"net/b{i}", np.zeros(fan_out))


def features_forward(params: ParamSet, x: np.ndarray):
    """Hidden ReLU stack up to the bottleneck; returns ``(z, cache)``."""
    cache = []
    h = x
    for i in range(_num_layers(params) - 1):
        pre = dense_forward(h, params[f"net/w{i}"], params[f"net/b{i}"])
        cache.append((h, pre))
        h = relu(pre)
    return h, cache


def features_backward(params: ParamSet, cache, grad_z: np.ndarray) -> None:
    g = grad_z
    for i in reversed(range(len(cache))):
        h, pre = cache[i]
        g = relu_backward(pre, g)
        g, gw, gb = dense_backward(h, params[f"net/w{i}"], g)
        params.grads[f"net/w{i}"] += gw
        params.grads[f"net/b{i}"] += gb


def head_forward(params: ParamSet, z: np.ndarray) -> np.ndarray:
    last = _num_layers(params) - 1
    return dense_forward(z, params[f"net/w{last}"], params[f"net/b{last}"])


def head_backward(params: ParamSet, z: np.ndarray, grad_logits: np.ndarray) -> np.ndarray:
    last = _num_layers(params) - 1
    gz, gw, gb = dense_backward(z, params[f"net/w{last}"], grad_logits)
    params.grads[f"net/w{last}"] += gw
    params.grads[f"net/b{last}"] += gb
    return gz


@dataclass
class Model:
    """Trained classifier, plus the frozen entropy model when ``lam > 0``."""

    params: ParamSet
    lam: float = 0.0
    density: Optional[FactorizedDensity] = None
    tables: Optional[ProbabilityTable] = None

    @property
    def uses_bottleneck(self) -> bool:
        return self.density is not None

    @property
    def channels(self) -> int:
        return self.params[f"net/b{_num_layers(self.params) - 2}"].size

    def features(self, x: np.ndarray) -> np.ndarray:
        return features_forward(self.params, np.asarray(x, dtype=np.float64))[0]

    def quantized_features(self, x: np.ndarray) -> np.ndarray:
        return quantize(self.features(x))

    def head_logits(self, z: np.ndarray) -> np.ndarray:
        return head_forward(self.params, np.asarray(z, dtype=np.float64))

    def predict_from_features(self, z: np.ndarray) -> np.ndarray:
        return self.head_logits(z).argmax(axis=1)

    def predict(self, x: np.ndarray) -> np.ndarray:
        z = self.features(x)
        if self.uses_bottleneck:
            z = quantize(z)
        return self.predict_from_features(z)

    def error(self, x: np.ndarray, y: np.ndarray) -> float:
        """Classification error in percent."""
        return 100.0 * float(np.mean(self.predict(x) != y))

    # -- persistence --

    def checkpoint_tensors(self) -> Dict[str, np.ndarray]:
        tensors = {name: value for name, value in self.params.params.items() if name.startswith("net/")}
        if self.density is not None:
            tensors.update(self.density.params)
        tensors["meta/lambda"] = np.array([self.lam])
        return tensors

    def to_checkpoint(self) -> bytes:
        return checkpoint_bytes(self.checkpoint_tensors())

    @classmethod
    def from_checkpoint(cls, data: bytes, tables: Optional[ProbabilityTable] = None) -> "Model":
        tensors = checkpoint_from_bytes(data)
        lam = float(tensors.pop("meta/lambda", np.zeros(1))[0])
        params = ParamSet()
        density_params = {}
        for name, value in tensors.items():
            if name.startswith("density/"):
                density_params[name] = value
            else:
                params.add(name, value)
        density = FactorizedDensity(density_params) if density_params else None
        if density is not None and tables is None:
            tables = build_tables(density)
        return cls(params, lam, density, tables)

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "model.cfck"), "wb") as f:
            f.write(self.to_checkpoint())
        if self.tables is not None:
            self.tables.save(os.path.join(directory, "tables.cftb"))

    @classmethod
    def load(cls, directory) -> "Model":
        tables = None
        table_path = os.path.join(directory, "tables.cftb")
        if os.path.exists(table_path):
            tables = ProbabilityTable.load(table_path)
        with open(os.path.join(directory, "model.cfck"), "rb") as f:
            return cls.from_checkpoint(f.read(), tables)


def _batch_indices(seed: int, step: int, n: int, batch: int) -> np.ndarray:
    return np.random.default_rng([seed, step, 0]).integers(0, n, size=batch)


def _init_params(dataset: Dataset, config: TrainConfig) -> ParamSet:
    params = ParamSet()
    sizes = [dataset.dim, *config.hidden, dataset.num_classes]
    init_network(params, sizes, np.random.default_rng([config.seed, 0, 2]))
    return params


def _weight_names(params: ParamSet):
    return params.names("net/w")


def _check_loss(loss: float, step: int) -> None:
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss} at step {step}")


Observer = Callable[[int, ParamSet], None]


def train_classifier(dataset: Dataset, config: TrainConfig, observer: Optional[Observer] = None) -> Model:
    """Plain cross-entropy training with no bottleneck machinery at all.

    ``observer(step, params)`` is called after every optimizer step.
    """
    params = _init_params(dataset, config)
    state = AdamState()
    n = len(dataset.y_train)
    for step in range(config.steps):
        lr = cosine_decay_lr(step, config.steps, config.lr0)
        idx = _batch_indices(config.seed, step, n, config.batch)
        xb, yb = dataset.x_train[idx], dataset.y_train[idx]
        params.zero_grad()
        z, cache = features_forward(params, xb)
        loss, g_logits = softmax_cross_entropy(head_forward(params, z), yb)
        _check_loss(loss, step)
        features_backward(params, cache, head_backward(params, z, g_logits))
        weight_decay(params, config.weight_decay, _weight_names(params))
        adam_step(params, state, lr)
        if observer is not None:
            observer(step, params)
    return Model(params, 0.0)


def objective_gradients(
    params: ParamSet,
    density: Optional[FactorizedDensity],
    xb: np.ndarray,
    yb: np.ndarray,
    bottleneck: BottleneckConfig,
    noise: Optional[np.random.Generator],
) -> LossReport:
    """Accumulate gradients of ``CE + lam * bits/example`` into ``params.grads``.

    Without a density the head sees ``z`` directly and no rate is computed.
    """
    z, cache = features_forward(params, xb)
    if density is not None:
        z_rate, z_head = train_forward(z, noise)
    else:
        z_head = z
    task_loss, g_logits = softmax_cross_entropy(head_forward(params, z_head), yb)
    grad_z = straight_through_backward(head_backward(params, z_head, g_logits))
    if density is None:
        report = LossReport(task_loss, 0.0, task_loss)
    else:
        rate, g_rate, g_density = density.rate_bits_noisy(z_rate)
        report = combined_loss(task_loss, rate, bottleneck, len(yb))
        scale = bottleneck.lam / len(yb)
        grad_z = grad_z + scale * g_rate
        for name, g in g_density.items():
            params.grads[name] += scale * g
    features_backward(params, cache, grad_z)
    return report


def train_model(
    dataset: Dataset,
    config: TrainConfig,
    history: Optional[list] = None,
    observer: Optional[Observer] = None,
) -> Model:
    """Jointly train network and entropy model on ``CE + lam * bits/example``.

    The rate path sees ``z + u`` with uniform noise; the head sees
    ``round(z)`` with a straight-through gradient. The entropy model is
    excluded from weight decay. Tables are frozen after the last step.
    """
    params = _init_params(dataset, config)
    channels = config.hidden[-1]
    bottleneck = BottleneckConfig(config.lam, channels)
    use_rate = not (config.lam == 0 and config.skip_rate_when_zero)
    density = None
    if use_rate:
        density = FactorizedDensity.create(channels)
        for name, value in density.params.items():
            params.add(name, value)
        # share storage so Adam's in-place updates reach the density
        density.params = {name: params.params[name] for name in density.params}
    state = AdamState()
    n = len(dataset.y_train)
    weights = _weight_names(params)
    for step in range(config.steps):
        lr = cosine_decay_lr(step, config.steps, config.lr0)
        idx = _batch_indices(config.seed, step, n, config.batch)
        xb, yb = dataset.x_train[idx], dataset.y_train[idx]
        params.zero_grad()
        noise = noise_rng(config.seed, step) if use_rate else None
        try:
            report = objective_gradients(params, density, xb, yb, bottleneck, noise)
        except NonFiniteError as exc:
            raise TrainingDiverged(f"rate diverged at step {step}: {exc}") from exc
        _check_loss(report.total, step)
        if history is not None:
            history.append((step, report.task_loss, report.rate_bits, report.total))
        weight_decay(params, config.weight_decay, weights)
        adam_step(params, state, lr)
        if observer is not None:
            observer(step, params)
    for name in params.params:
        check_finite(name, params[name])
    tables = build_tables(density) if density is not None else None
    return Model(params, config.lam, density, tables)
