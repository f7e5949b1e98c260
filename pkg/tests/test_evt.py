import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from evtradio.errors import ConfigError, DomainError
from evtradio.evt import (XI_SWITCH, QosTarget, TailModel, excesses, fit_gpd, fit_tail,
                          gpd_nll, outage, pwm_estimate, select_threshold, transform)


def gpd_draws(scale, shape, n, seed):
    """Inverse-CDF GPD sampler, independent of the fitting code."""
    u = np.random.default_rng(seed).random(n)
    if shape == 0:
        return -scale * np.log1p(-u)
    return scale * ((1 - u) ** (-shape) - 1) / shape


def test_transform_is_negative_log():
    x = np.array([1.0, math.e, 0.5])
    np.testing.assert_allclose(transform(x), [0.0, -1.0, math.log(2)])


def test_transform_rejects_nonpositive():
    with pytest.raises(DomainError):
        transform([1.0, 0.0])


@pytest.mark.parametrize("n", [1000, 1001, 20_000, 12_345])
def test_threshold_is_nearest_rank(n, rng):
    x = rng.standard_normal(n)
    k = -(-99 * n // 100)  # exact ceil(0.99 n) in integers
    assert select_threshold(x, 0.99) == sorted(x)[k - 1]


def test_threshold_needs_enough_excesses():
    with pytest.raises(ConfigError, match="n_samples"):
        select_threshold(np.arange(50.0), 0.99)
    with pytest.raises(ConfigError, match="rho"):
        select_threshold(np.arange(500.0), 0.5)


def test_excesses_strictly_above():
    z = excesses(np.array([1.0, 2.0, 3.0, 3.0, 5.0]), 3.0)
    np.testing.assert_array_equal(z, [2.0])


@pytest.mark.parametrize("shape", [-0.3, 0.0, 0.25])
def test_nll_matches_scipy(shape, rng):
    z = gpd_draws(1.3, shape, 500, seed=4)
    expected = -stats.genpareto.logpdf(z, shape, scale=1.3).sum()
    assert gpd_nll(1.3, shape, z) == pytest.approx(expected, rel=1e-10)


def test_nll_outside_support():
    z = np.array([0.5, 3.0])
    assert gpd_nll(1.0, -0.5, z) == math.inf  # endpoint at 2 < 3
    assert gpd_nll(-1.0, 0.1, z) == math.inf
    assert gpd_nll(1.0, -1.0, z) == math.inf


@pytest.mark.parametrize("shape", [-0.2, 0.0, 0.2])
def test_mle_recovers_parameters(shape):
    z = gpd_draws(1.0, shape, 50_000, seed=11)
    fit = fit_gpd(z)
    assert fit.converged
    assert abs(fit.scale - 1.0) < 0.03
    assert abs(fit.shape - shape) < 0.03


@pytest.mark.parametrize("shape", [-0.2, 0.1, 0.3])
def test_mle_agrees_with_scipy_fit(shape):
    z = gpd_draws(0.7, shape, 4000, seed=21)
    fit = fit_gpd(z)
    c, _, scale = stats.genpareto.fit(z, floc=0)
    ours = gpd_nll(fit.scale, fit.shape, z)
    theirs = gpd_nll(scale, c, z)
    # our optimum is at least as good as scipy's, and close to it
    assert ours <= theirs + 1e-6
    assert fit.shape == pytest.approx(c, abs=5e-3)
    assert fit.scale == pytest.approx(scale, rel=5e-3)


def test_pwm_close_on_large_sample():
    scale, shape = pwm_estimate(gpd_draws(2.0, 0.1, 100_000, seed=3))
    assert scale == pytest.approx(2.0, rel=0.03)
    assert shape == pytest.approx(0.1, abs=0.03)


def test_fit_rejects_small_or_bad_input():
    with pytest.raises(ConfigError):
        fit_gpd(np.ones(10))
    with pytest.raises(DomainError):
        fit_gpd(np.r_[np.ones(40), -1.0])


def test_fit_tail_pipeline(rng):
    samples = rng.exponential(size=20_000)
    tail = fit_tail(samples, 0.99)
    # -ln of an Exp(1) variable has a Gumbel-type lower tail; threshold near -ln(-ln .99)
    assert tail.threshold == pytest.approx(-math.log(-math.log(0.99)), abs=0.2)
    assert tail.scale > 0 and tail.rho == 0.99


def test_outage_matches_scipy_survival():
    tail = TailModel(threshold=1.0, scale=0.8, shape=0.15, rho=0.99)
    for phi in (1.0, 1.5, 4.0):
        expected = 0.01 * stats.genpareto.sf(phi - 1.0, 0.15, scale=0.8)
        assert outage(tail, phi) == pytest.approx(expected, rel=1e-12)


def test_outage_beyond_finite_endpoint():
    tail = TailModel(threshold=0.0, scale=1.0, shape=-0.5, rho=0.99)
    assert outage(tail, 2.5) == 0.0
    assert outage(tail, 1.0) > 0


def test_outage_below_threshold_is_tail_mass():
    tail = TailModel(threshold=2.0, scale=1.0, shape=0.1, rho=0.95)
    assert outage(tail, 0.0) == pytest.approx(0.05)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.0, 20.0), st.sampled_from([-1.0, 1.0]))
def test_outage_continuous_across_shape_switch(scale, excess, sign):
    # shapes just inside and just outside the exponential-limit branch
    inside = TailModel(0.0, scale, sign * XI_SWITCH * (1 - 1e-9), 0.99)
    outside = TailModel(0.0, scale, sign * XI_SWITCH * (1 + 1e-9), 0.99)
    a, b = outage(inside, excess), outage(outside, excess)
    assert abs(a - b) <= 1e-9 * a


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(-0.4, 0.6), st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_outage_monotone_in_level(scale, shape, x1, x2):
    tail = TailModel(0.0, scale, shape, 0.99)
    lo, hi = sorted((x1, x2))
    assert outage(tail, hi) <= outage(tail, lo) + 1e-18


def test_shifted_moves_threshold_only():
    tail = TailModel(1.0, 0.5, 0.1, 0.99)
    moved = tail.shifted(0.3)
    assert (moved.threshold, moved.scale, moved.shape) == (0.7, 0.5, 0.1)


def test_qos_target_validation():
    t = QosTarget.from_db(10.0, 1e-3)
    assert t.gamma0 == pytest.approx(10.0)
    assert t.phi == pytest.approx(-math.log(10.0))
    with pytest.raises(ConfigError, match="zeta"):
        QosTarget(10.0, 0.0)
    with pytest.raises(ConfigError, match="zeta"):
        QosTarget(10.0, 0.02).check_against(0.99)


def test_tail_model_validation():
    with pytest.raises(DomainError):
        TailModel(0.0, 0.0, 0.1, 0.99)
    with pytest.raises(DomainError):
        TailModel(0.0, 1.0, 0.1, 0.5)


def test_threshold_matches_normal_quantile():
    x = np.random.default_rng(12).standard_normal(100_000)
    assert select_threshold(x, 0.99) == pytest.approx(stats.norm.ppf(0.99), abs=0.05)
    assert stats.norm.ppf(0.99) == pytest.approx(2.3263, abs=1e-4)


@pytest.mark.parametrize("seed", range(5))
def test_excess_count_near_tail_fraction(seed):
    x = np.random.default_rng(seed).standard_normal(100_000)
    n = excesses(x, select_threshold(x, 0.99)).size
    assert abs(n - 1000) <= 20


@pytest.mark.parametrize("shape", [-0.2, 0.2])
def test_mle_recovery_every_seed(shape):
    for seed in range(10):
        fit = fit_gpd(gpd_draws(1.0, shape, 50_000, seed=500 + seed))
        assert 0.97 <= fit.scale <= 1.03
        assert abs(fit.shape - shape) <= 0.03


def test_exponential_is_zero_shape_limit():
    for seed in range(10):
        z = np.random.default_rng(700 + seed).exponential(2.0, 50_000)
        fit = fit_gpd(z)
        assert 1.94 <= fit.scale <= 2.06
        assert abs(fit.shape) <= 0.03


def test_fitted_tail_matches_fresh_frequencies():
    # Rayleigh-faded power: P(x < g) = 1 - exp(-g) exactly
    tail = fit_tail(np.random.default_rng(3).exponential(size=100_000), 0.99)
    fresh = np.random.default_rng(4).exponential(size=1_000_000)
    for p in (1.5e-3, 1.2e-3, 1e-3, 8e-4, 6.7e-4):
        g = -math.log1p(-p)
        empirical = np.count_nonzero(fresh < g) / fresh.size
        assert abs(outage(tail, -math.log(g)) - empirical) <= 0.15 * empirical


def test_fitted_gpd_matches_fresh_gpd_frequencies():
    fit = fit_gpd(gpd_draws(1.0, 0.1, 50_000, seed=31))
    tail = TailModel(0.0, fit.scale, fit.shape, 0.99)
    fresh = gpd_draws(1.0, 0.1, 1_000_000, seed=32)
    for p in (1.5e-3, 1.2e-3, 1e-3, 8e-4, 6.7e-4):
        level = stats.genpareto.isf(p, 0.1)
        empirical = np.count_nonzero(fresh > level) / fresh.size
        assert abs(outage(tail, level) / 0.01 - empirical) <= 0.15 * empirical
