import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from compressible_features.entropy_model import (
    LIKELIHOOD_FLOOR,
    FactorizedDensity,
    interval_probability,
)

from oracles import logistic_cdf, probe_difference


def scalar_cdf(density, channel, x):
    """Per-unit Python loop over the layer stack, using math only."""
    h = [float(x)]
    for k in range(density.num_layers):
        raw = density.params[f"density/matrix{k}"][channel]
        bias = density.params[f"density/bias{k}"][channel]
        factor = density.params.get(f"density/factor{k}")
        out = []
        for o in range(raw.shape[0]):
            acc = bias[o, 0]
            for i in range(raw.shape[1]):
                acc += math.log1p(math.exp(raw[o, i])) * h[i]
            if factor is not None:
                acc = acc + math.tanh(factor[channel][o, 0]) * math.tanh(acc)
            out.append(acc)
        h = out
    return logistic_cdf(h[0])


def test_fresh_init_is_logistic():
    dens = FactorizedDensity.create(2)
    assert dens.cdf(0, 0.0) == pytest.approx(0.5, abs=1e-9)
    for x in (-3.0, -0.7, 1.2, 4.0):
        assert dens.cdf(1, x) == pytest.approx(logistic_cdf(x), abs=1e-12)
    assert dens.cdf(0, 1e4) - dens.cdf(0, -1e4) > 1 - 1e-6


def test_matches_scalar_loop_oracle():
    dens = FactorizedDensity.random(3, np.random.default_rng(0))
    for c in range(3):
        for x in (-5.0, -0.3, 0.0, 2.5, 10.0):
            assert dens.cdf(c, x) == pytest.approx(scalar_cdf(dens, c, x), rel=1e-12, abs=1e-15)


def test_pmf_sums_to_one_and_is_symmetric():
    dens = FactorizedDensity.create(1)
    n = np.arange(-50, 51)
    pmf = dens.pmf_integer(0, n)
    raw = interval_probability(dens.channel_logits(0, n - 0.5), dens.channel_logits(0, n + 0.5))
    assert 1 - 1e-3 < raw.sum() <= 1.0
    # the floor lifts far-tail bins, so the floored sum may exceed 1 by at most one floor per bin
    assert 1 - 1e-3 < pmf.sum() <= 1.0 + n.size * LIKELIHOOD_FLOOR
    np.testing.assert_allclose(pmf, pmf[::-1], atol=1e-9)
    assert np.all(dens.pmf_integer(0, np.arange(-1000, 1001)) >= LIKELIHOOD_FLOOR)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), spread=st.floats(0.1, 4.0))
def test_cdf_monotone_and_bounded(seed, spread):
    rng = np.random.default_rng(seed)
    dens = FactorizedDensity.random(4, rng, spread=spread)
    x = np.sort(rng.normal(0, 20, size=(4, 200)), axis=1)
    cdf = expit(dens.logits(x))
    assert np.all((cdf >= 0) & (cdf <= 1))
    assert np.all(np.diff(cdf, axis=1) >= 0)
    assert np.all(np.diff(dens.logits(x), axis=1) >= 0)


def test_interval_probability_stable_in_tails():
    lo, hi = np.array([40.0, -41.0]), np.array([41.0, -40.0])
    p = interval_probability(lo, hi)
    ref = math.exp(-40) - math.exp(-41)
    np.testing.assert_allclose(p, [ref, ref], rtol=1e-10)


def test_rate_additivity_and_half_probability():
    dens = FactorizedDensity.create(1)
    p0 = logistic_cdf(0.5) - logistic_cdf(-0.5)
    rep = dens.rate_bits(np.zeros((10, 1)))
    assert rep.total_bits == pytest.approx(-10 * math.log2(p0), rel=1e-12)
    # with cdf(x) = sigmoid(x / s) the unit bin at 0 holds tanh(0.25 / s)
    dens = FactorizedDensity.create(1, init_scale=0.25 / math.atanh(0.5))
    assert dens.rate_bits(np.zeros((1, 1))).total_bits == pytest.approx(1.0, rel=1e-9)
    assert dens.rate_bits(np.zeros((10, 1))).total_bits == pytest.approx(10.0, rel=1e-9)


def test_single_symbol_two_bits():
    scale = 0.25 / math.atanh(0.25)
    dens = FactorizedDensity.create(1, init_scale=scale)
    assert dens.rate_bits_discrete(np.array([[0]])).total_bits == pytest.approx(2.0, rel=1e-9)


def test_discrete_matches_noisy_at_integers():
    rng = np.random.default_rng(1)
    dens = FactorizedDensity.random(5, rng)
    z = rng.integers(-6, 7, size=(20, 5))
    disc = dens.rate_bits_discrete(z)
    noisy, _, _ = dens.rate_bits_noisy(z.astype(float))
    assert disc.total_bits == noisy.total_bits
    np.testing.assert_array_equal(disc.per_channel_bits, noisy.per_channel_bits)


def test_discrete_matches_scalar_loop():
    rng = np.random.default_rng(2)
    dens = FactorizedDensity.random(3, rng)
    z = rng.integers(-4, 5, size=(6, 3))
    total = 0.0
    for row in z:
        for c, n in enumerate(row):
            p = scalar_cdf(dens, c, n + 0.5) - scalar_cdf(dens, c, n - 0.5)
            total += -math.log2(max(p, LIKELIHOOD_FLOOR))
    assert dens.rate_bits_discrete(z).total_bits == pytest.approx(total, rel=1e-9)


def test_discrete_rejects_fractional():
    with pytest.raises(ValueError):
        FactorizedDensity.create(1).rate_bits_discrete(np.array([[0.5]]))


def test_report_totals_and_nonnegative():
    rng = np.random.default_rng(3)
    dens = FactorizedDensity.random(7, rng)
    rep = dens.rate_bits(rng.normal(0, 3, size=(30, 7)))
    assert abs(rep.total_bits - rep.per_channel_bits.sum()) <= 1e-9 * rep.total_bits
    assert np.all(rep.per_channel_bits >= 0)


def test_channel_factorization():
    rng = np.random.default_rng(4)
    dens = FactorizedDensity.random(4, rng)
    z = rng.normal(0, 2, size=(16, 4))
    joint = dens.rate_bits(z).total_bits
    parts = 0.0
    for c in range(4):
        single = FactorizedDensity({k: v[c : c + 1].copy() for k, v in dens.params.items()})
        parts += single.rate_bits(z[:, c : c + 1]).total_bits
    assert joint == pytest.approx(parts, rel=1e-12)


def test_rate_gradients_finite_differences():
    rng = np.random.default_rng(5)
    dens = FactorizedDensity.random(3, rng, spread=0.7)
    z = rng.normal(0, 2, size=(8, 3))
    _, grad_z, grad_p = dens.rate_bits_noisy(z)
    for _ in range(16):
        idx = tuple(int(rng.integers(s)) for s in z.shape)
        fd = probe_difference(lambda v: dens.rate_bits(v).total_bits, z, idx)
        assert abs(grad_z[idx] - fd) <= 1e-4 * max(abs(fd), 1e-3)
    for name, value in dens.params.items():
        for _ in range(4):
            idx = tuple(int(rng.integers(s)) for s in value.shape)

            def f(v, name=name):
                trial = dens.copy()
                trial.params[name][...] = v
                return trial.rate_bits(z).total_bits

            fd = probe_difference(f, value, idx)
            assert abs(grad_p[name][idx] - fd) <= 1e-4 * max(abs(fd), 1e-3), name


def test_floor_blocks_gradient():
    dens = FactorizedDensity.create(1)
    rep, grad_z, grad_p = dens.rate_bits_noisy(np.array([[200.0]]))
    assert rep.total_bits == pytest.approx(-math.log2(LIKELIHOOD_FLOOR))
    assert grad_z[0, 0] == 0.0
    assert all(np.all(g == 0) for g in grad_p.values())


def test_channel_index_checked():
    dens = FactorizedDensity.create(2)
    with pytest.raises(IndexError):
        dens.cdf(2, 0.0)
    with pytest.raises(ValueError):
        dens.rate_bits(np.zeros((3, 3)))
