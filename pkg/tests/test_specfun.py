"""Test special functions, random streams and distribution specs"""

import math

import numpy as np
import pytest
from scipy import stats

from src.core.exceptions import DomainError
from src.core.specfun import (
    Beta,
    Exponential,
    FinitePmf,
    Gamma,
    GeometricOnPositives,
    Multinomial,
    Poisson,
    RngStream,
    chi2_quantile,
    digamma,
    draw,
    log_beta,
    log_gamma,
    normal_quantile,
    trigamma,
)

EULER_GAMMA = 0.5772156649015329


@pytest.mark.parametrize("x, expected", [
    (1.0, 0.0),
    (0.5, 0.5723649429247001),
    (10.0, math.log(math.factorial(9))),
])
def test_log_gamma_values(x, expected):
    assert log_gamma(x) == pytest.approx(expected, rel=1e-12, abs=1e-14)


def test_log_gamma_recurrence():
    for x in np.linspace(0.1, 50, 200):
        lhs = math.exp(log_gamma(x + 1))
        rhs = x * math.exp(log_gamma(x))
        assert lhs == pytest.approx(rhs, rel=1e-9)


def test_digamma_values():
    assert digamma(1.0) == pytest.approx(-EULER_GAMMA, abs=1e-12)
    assert digamma(2.0) == pytest.approx(1.0 - EULER_GAMMA, abs=1e-12)
    assert abs(digamma(1000.0) - (math.log(1000.0) - 1.0 / 2000.0)) < 1e-7


def test_digamma_recurrence():
    x = RngStream(7).generator.uniform(0.01, 100.0, size=10_000)
    assert np.max(np.abs(digamma(x + 1.0) - digamma(x) - 1.0 / x)) < 1e-10


@pytest.mark.parametrize("x, expected", [
    (1.0, math.pi ** 2 / 6.0),
    (0.5, math.pi ** 2 / 2.0),
    (10.0, 0.10516633568168575),
])
def test_trigamma_values(x, expected):
    assert trigamma(x) == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("func", [log_gamma, digamma, trigamma])
@pytest.mark.parametrize("x", [0.0, -1.0, float("nan")])
def test_domain_errors(func, x):
    with pytest.raises(DomainError):
        func(x)


def test_domain_error_is_value_error():
    with pytest.raises(ValueError):
        log_gamma(-2.0)


def test_log_beta():
    assert log_beta(2.0, 3.0) == pytest.approx(math.log(1.0 / 12.0), rel=1e-12)


def test_quantiles():
    assert normal_quantile(0.95) == pytest.approx(1.6449, abs=1e-4)
    assert chi2_quantile(0.90, 4) == pytest.approx(7.7794, abs=1e-4)
    with pytest.raises(DomainError):
        normal_quantile(1.0)


def test_rng_stream_reproducible():
    a = RngStream(42, 3).generator.random(5)
    b = RngStream(42, 3).generator.random(5)
    c = RngStream(42, 4).generator.random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_rng_spawn_is_keyed():
    root = RngStream(1)
    np.testing.assert_array_equal(root.spawn(2, 5).generator.random(3), RngStream(1).spawn(2, 5).generator.random(3))
    assert not np.array_equal(root.spawn(2, 5).generator.random(3), root.spawn(5, 2).generator.random(3))


def test_gamma_mean_large_sample():
    x = draw(Gamma(2.0, 3.0), RngStream(11), size=1_000_000)
    se = math.sqrt(Gamma(2.0, 3.0).variance() / x.size)
    assert abs(x.mean() - 2.0 / 3.0) < 4 * se


def test_geometric_mean_large_sample():
    spec = GeometricOnPositives(0.4)
    x = draw(spec, RngStream(12), size=1_000_000)
    assert x.min() == 1
    se = math.sqrt(spec.variance() / x.size)
    assert abs(x.mean() - 2.5) < 4 * se


@pytest.mark.parametrize("spec", [
    Gamma(0.3, 2.0),
    Gamma(5.0, 0.5),
    Beta(2.0, 5.0),
    Poisson(3.5),
    Exponential(0.5),
    GeometricOnPositives(0.7),
    FinitePmf((1.0, 3.0, 0.0, 2.0), offset=2),
])
def test_family_moments(spec):
    x = np.asarray(draw(spec, RngStream(99), size=100_000), dtype=float)
    n = x.size
    mean_se = math.sqrt(spec.variance() / n)
    assert abs(x.mean() - spec.mean()) < 4 * mean_se
    squared = (x - x.mean()) ** 2
    var_se = squared.std() / math.sqrt(n)
    assert abs(x.var() - spec.variance()) < 4 * var_se + 1e-12


def test_multinomial_zero_trials():
    np.testing.assert_array_equal(draw(Multinomial(0, (0.3, 0.7)), RngStream(0)), [0, 0])


def test_multinomial_sums_to_trials():
    x = draw(Multinomial(10, (0.2, 0.5, 0.3)), RngStream(0), size=1000)
    assert np.all(x.sum(axis=1) == 10)


def test_finite_pmf_frequencies():
    weights = (1.0, 2.0, 3.0, 4.0)
    spec = FinitePmf(weights, offset=5)
    x = draw(spec, RngStream(5), size=100_000)
    observed = np.bincount(x - 5, minlength=4)
    expected = np.array(weights) / sum(weights) * x.size
    assert stats.chisquare(observed, expected).pvalue > 0.001


def test_finite_pmf_from_log_weights():
    spec = FinitePmf.from_log_weights(np.log([1.0, 1.0, 2.0]), offset=1)
    np.testing.assert_allclose(spec.probs, [0.25, 0.25, 0.5])
    np.testing.assert_array_equal(spec.support, [1, 2, 3])


@pytest.mark.parametrize("build", [
    lambda: Gamma(0.0, 1.0),
    lambda: Beta(1.0, -1.0),
    lambda: Poisson(-0.1),
    lambda: Exponential(0.0),
    lambda: GeometricOnPositives(0.0),
    lambda: Multinomial(3, (0.5, 0.6)),
    lambda: FinitePmf((0.0, 0.0)),
])
def test_invalid_specs(build):
    with pytest.raises(DomainError):
        build()
