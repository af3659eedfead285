"""Fully factorized learnable density over integer-quantized features.

Each channel owns a small monotone network mapping a real value to the logit
of its cumulative distribution. Layer ``k`` computes
``h -> g_k(softplus(M_k) @ h + b_k)`` with ``g_k(x) = x + tanh(f_k) * tanh(x)``
on all but the last layer. Positive matrices and ``|tanh(f_k)| < 1`` keep the
map strictly increasing for any raw parameter values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np
from scipy.special import expit

from .tensor_core import check_finite

__all__ = [
    "LIKELIHOOD_FLOOR",
    "FactorizedDensity",
    "RateReport",
    "interval_probability",
]

LIKELIHOOD_FLOOR = 1e-9
PREFIX = "density/"


@dataclass
class RateReport:
    total_bits: float
    per_channel_bits: np.ndarray


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid_slope(x):
    # d/dx sigmoid(x), without overflow for large |x|
    e = np.exp(-np.abs(x))
    return e / (1.0 + e) ** 2


def interval_probability(lower_logits: np.ndarray, upper_logits: np.ndarray) -> np.ndarray:
    """``sigmoid(upper) - sigmoid(lower)`` evaluated on the far side of the median.

    Subtracting in the tail that is closer to zero keeps relative precision
    for intervals deep in either tail.
    """
    sign = np.where(lower_logits + upper_logits > 0.0, -1.0, 1.0)
    return np.abs(expit(sign * upper_logits) - expit(sign * lower_logits))


class FactorizedDensity:
    """One independent univariate CDF model per channel.

    Parameters live in ``self.params`` under the ``density/`` prefix so they
    can be dropped straight into a :class:`~.tensor_core.ParamSet` and a
    checkpoint. Arrays are shared, not copied.
    """

    def __init__(self, params: Dict[str, np.ndarray]):
        self.params = params
        k = 0
        while f"{PREFIX}matrix{k}" in params:
            k += 1
        if k == 0:
            raise ValueError("no density parameters found")
        self.num_layers = k
        self.channels = params[f"{PREFIX}matrix0"].shape[0]

    @classmethod
    def create(cls, channels: int, filters: Sequence[int] = (3, 3, 3), init_scale: float = 1.0):
        """Symmetric initialization: ``cdf(x) = sigmoid(x / init_scale)`` for every channel."""
        if channels < 1:
            raise ValueError("channels must be positive")
        widths = (1,) + tuple(filters) + (1,)
        num_layers = len(widths) - 1
        scale = init_scale ** (1.0 / num_layers)
        params = {}
        for k in range(num_layers):
            fan_in, fan_out = widths[k], widths[k + 1]
            init = np.log(np.expm1(1.0 / scale / fan_out))
            params[f"{PREFIX}matrix{k}"] = np.full((channels, fan_out, fan_in), init)
            params[f"{PREFIX}bias{k}"] = np.zeros((channels, fan_out, 1))
            if k < num_layers - 1:
                params[f"{PREFIX}factor{k}"] = np.zeros((channels, fan_out, 1))
        return cls(params)

    @classmethod
    def random(cls, channels: int, rng: np.random.Generator, filters=(3, 3, 3), spread: float = 1.0):
        """Arbitrary raw parameters, for fuzzing the monotonicity guarantees."""
        dens = cls.create(channels, filters)
        for name, value in dens.params.items():
            value[...] = rng.normal(0.0, spread, size=value.shape)
        return dens

    def param_names(self) -> List[str]:
        return list(self.params)

    def copy(self) -> "FactorizedDensity":
        return FactorizedDensity({k: v.copy() for k, v in self.params.items()})

    # -- forward / backward -------------------------------------------------

    def _layers(self, channels):
        p = self.params
        for k in range(self.num_layers):
            raw = p[f"{PREFIX}matrix{k}"][channels]
            bias = p[f"{PREFIX}bias{k}"][channels]
            factor = p.get(f"{PREFIX}factor{k}")
            yield raw, bias, None if factor is None else factor[channels]

    def _forward(self, x: np.ndarray, channels=slice(None)):
        """``x`` has shape (C, N); returns logits (C, N) and a backward cache."""
        h = x[:, None, :]
        cache = []
        for raw, bias, factor in self._layers(channels):
            matrix = _softplus(raw)
            pre = matrix @ h + bias
            if factor is None:
                cache.append((h, raw, matrix, None, None))
                h = pre
            else:
                a = np.tanh(factor)
                t = np.tanh(pre)
                cache.append((h, raw, matrix, a, t))
                h = pre + a * t
        return h[:, 0, :], cache

    def _backward(self, grad_logits: np.ndarray, cache):
        """Returns gradients w.r.t. ``x`` (C, N) and every parameter."""
        grads = {}
        g = grad_logits[:, None, :]
        for k in reversed(range(self.num_layers)):
            h, raw, matrix, a, t = cache[k]
            if a is not None:
                grads[f"{PREFIX}factor{k}"] = (g * t).sum(axis=2, keepdims=True) * (1.0 - a * a)
                g = g * (1.0 + a * (1.0 - t * t))
            grads[f"{PREFIX}bias{k}"] = g.sum(axis=2, keepdims=True)
            grads[f"{PREFIX}matrix{k}"] = (g @ np.swapaxes(h, 1, 2)) * expit(raw)
            g = np.swapaxes(matrix, 1, 2) @ g
        return g[:, 0, :], grads

    def logits(self, x: np.ndarray) -> np.ndarray:
        """CDF logits for ``x`` of shape (C, N)."""
        return self._forward(np.asarray(x, dtype=np.float64))[0]

    def channel_logits(self, channel: int, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        sl = slice(channel, channel + 1)
        return self._forward(x[None, :], sl)[0][0]

    def cdf(self, channel: int, x):
        if not 0 <= channel < self.channels:
            raise IndexError(f"channel {channel} out of range")
        out = expit(self.channel_logits(channel, x))
        return out if np.ndim(x) else float(out[0])

    def pmf_integer(self, channel: int, n):
        """Probability mass of the unit bin centred on integer ``n``."""
        if not 0 <= channel < self.channels:
            raise IndexError(f"channel {channel} out of range")
        n_arr = np.atleast_1d(np.asarray(n, dtype=np.float64))
        both = self.channel_logits(channel, np.concatenate([n_arr - 0.5, n_arr + 0.5]))
        m = n_arr.size
        p = np.maximum(interval_probability(both[:m], both[m:]), LIKELIHOOD_FLOOR)
        return p if np.ndim(n) else float(p[0])

    def likelihood(self, z: np.ndarray) -> np.ndarray:
        """Floored unit-bin probability for each element of ``z`` (B, C)."""
        z = np.asarray(z, dtype=np.float64)
        b = z.shape[0]
        zt = z.T
        both = self.logits(np.concatenate([zt - 0.5, zt + 0.5], axis=1))
        p = interval_probability(both[:, :b], both[:, b:])
        return np.maximum(p, LIKELIHOOD_FLOOR).T

    def rate_bits(self, z: np.ndarray, with_grad: bool = False):
        """Code length ``sum -log2 p(z)`` under unit-bin probabilities.

        With ``with_grad`` also returns ``(grad_z, grad_params)`` of
        ``total_bits``.
        """
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.channels:
            raise ValueError(f"expected (B, {self.channels}) input, got {z.shape}")
        b = z.shape[0]
        zt = z.T
        both, cache = self._forward(np.concatenate([zt - 0.5, zt + 0.5], axis=1))
        lower, upper = both[:, :b], both[:, b:]
        p = interval_probability(lower, upper)
        floored = p < LIKELIHOOD_FLOOR
        p = np.where(floored, LIKELIHOOD_FLOOR, p)
        bits = -np.log2(p)
        per_channel = check_finite("rate", bits.sum(axis=1))
        report = RateReport(float(per_channel.sum()), per_channel)
        if not with_grad:
            return report
        dbits_dp = np.where(floored, 0.0, -1.0 / (p * np.log(2.0)))
        grad_both = np.concatenate(
            [-dbits_dp * _sigmoid_slope(lower), dbits_dp * _sigmoid_slope(upper)], axis=1
        )
        grad_x, grad_params = self._backward(grad_both, cache)
        grad_z = grad_x[:, :b] + grad_x[:, b:]
        return report, check_finite("rate gradient", grad_z.T), grad_params

    def rate_bits_noisy(self, z_noisy: np.ndarray):
        """Differentiable rate of noise-perturbed features: ``(report, grad_z, grad_params)``."""
        return self.rate_bits(z_noisy, with_grad=True)

    def rate_bits_discrete(self, z_hat: np.ndarray) -> RateReport:
        z_hat = np.asarray(z_hat)
        if z_hat.ndim == 1:
            z_hat = z_hat[None, :]
        if not np.array_equal(z_hat, np.round(z_hat)):
            raise ValueError("rate_bits_discrete expects integer-valued input")
        return self.rate_bits(z_hat.astype(np.float64))
