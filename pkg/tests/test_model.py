"""Test data types, closed-form moments and the forward simulators"""

import math

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from src.core.exceptions import DataFormatError, DomainError
from src.core.model import (
    Dataset,
    Observation,
    Kind,
    Stratum,
    Theta,
    dlol_char_fn,
    dlol_moments,
    lol_char_fn,
    lol_moments,
    sample_dlol,
    sample_lol,
    simulate_hierarchy,
    uniform_design,
    zero_fraction,
)
from src.core.specfun import RngStream

URCHIN = Theta(1.0, 1.0, 5.0, 13.0)
SUNSTAR = Theta(1.9, 1.8, 1.9, 0.9)


def test_lol_moments_examples():
    mean, var, p0 = lol_moments(1.0, 2.0, 0.5)
    assert (mean, var) == pytest.approx((4.0, 16.0))
    assert p0 == pytest.approx(math.exp(-2.0))

    mean, var, p0 = lol_moments(0.3, 1.0, 1.0)
    assert (mean, var, p0) == pytest.approx((0.3, 0.6, 0.740818), abs=1e-6)


def test_lol_moments_vanishing_rate():
    mean, var, p0 = lol_moments(1e-12, 1.0, 1.0)
    assert mean == pytest.approx(0.0, abs=1e-11)
    assert p0 == pytest.approx(1.0)


def test_dlol_moments_examples():
    mean, var, p0 = dlol_moments(2.0, 1.0, 0.5)
    assert (mean, var) == pytest.approx((4.0, 12.0))
    assert p0 == pytest.approx(math.exp(-2.0))


@pytest.mark.parametrize("args", [(0.0, 1.0, 1.0), (1.0, 0.0, 1.0), (1.0, 1.0, -1.0)])
def test_lol_moments_domain(args):
    with pytest.raises(DomainError):
        lol_moments(*args)


def test_dlol_moments_domain():
    with pytest.raises(DomainError):
        dlol_moments(1.0, 1.0, 1.5)


def test_moments_additive_in_effort():
    m1, v1, z1 = lol_moments(0.7, 1.0, 2.0)
    m2, v2, z2 = lol_moments(0.7, 2.5, 2.0)
    m, v, z = lol_moments(0.7, 3.5, 2.0)
    assert (m, v, z) == pytest.approx((m1 + m2, v1 + v2, z1 * z2))


@pytest.mark.parametrize("sampler, mark", [(sample_lol, 0.8), (sample_dlol, 0.35)])
def test_sampler_additive_in_effort(sampler, mark):
    n = 100_000
    split = sampler(0.6, mark, RngStream(40, 0), size=n) + sampler(1.1, mark, RngStream(40, 1), size=n)
    joint = sampler(1.7, mark, RngStream(40, 2), size=n)
    p0 = math.exp(-1.7)
    se = math.sqrt(2 * p0 * (1 - p0) / n)
    assert abs(np.mean(split == 0) - np.mean(joint == 0)) < 4 * se
    assert stats.ks_2samp(split[split > 0], joint[joint > 0]).pvalue > 0.001


def test_char_fn_at_zero():
    assert lol_char_fn(0.0, 1.3, 0.7) == pytest.approx(1.0)
    assert dlol_char_fn(0.0, 1.3, 0.4) == pytest.approx(1.0)


@pytest.mark.parametrize("omega", [-3.0, -0.5, 0.2, 1.0, 7.0])
def test_char_fn_infinitely_divisible(omega):
    assert lol_char_fn(omega, 3.0, 0.8) == pytest.approx(lol_char_fn(omega, 1.0, 0.8) * lol_char_fn(omega, 2.0, 0.8))
    assert dlol_char_fn(omega, 3.0, 0.3) == pytest.approx(dlol_char_fn(omega, 1.0, 0.3) * dlol_char_fn(omega, 2.0, 0.3))
    assert abs(lol_char_fn(omega, 3.0, 0.8)) <= 1.0 + 1e-12
    assert abs(dlol_char_fn(omega, 3.0, 0.3)) <= 1.0 + 1e-12


@pytest.mark.parametrize("omega", [0.1, 0.5, 1.5])
def test_char_fn_matches_empirical(omega):
    y = sample_lol(1.5, 0.8, RngStream(3), size=200_000)
    z = np.exp(1j * omega * y)
    target = lol_char_fn(omega, 1.5, 0.8)
    se_re = z.real.std() / math.sqrt(y.size)
    se_im = z.imag.std() / math.sqrt(y.size)
    assert abs(z.real.mean() - target.real) < 4 * se_re + 1e-12
    assert abs(z.imag.mean() - target.imag) < 4 * se_im + 1e-12


def test_sample_lol_large_sample():
    y = sample_lol(2.0, 0.5, RngStream(21), size=1_000_000)
    zero = np.mean(y == 0)
    p0 = math.exp(-2.0)
    assert abs(zero - p0) < 4 * math.sqrt(p0 * (1 - p0) / y.size)
    assert abs(y.mean() - 4.0) < 4 * math.sqrt(16.0 / y.size)


def test_sample_lol_zero_rate_is_zero():
    y = sample_lol(0.0, 1.0, RngStream(0), size=100)
    assert np.all(y == 0)


def test_sample_lol_zero_iff_no_clumps():
    y, n = sample_lol(1.0, 1.0, RngStream(8), size=10_000, return_counts=True)
    np.testing.assert_array_equal(y == 0, n == 0)


def test_sample_dlol_mean():
    y = sample_dlol(2.0, 0.5, RngStream(22), size=1_000_000)
    assert np.issubdtype(y.dtype, np.integer)
    assert abs(y.mean() - 4.0) < 4 * math.sqrt(12.0 / y.size)


def test_sample_dlol_unit_p_is_poisson():
    y, n = sample_dlol(1.7, 1.0, RngStream(23), size=100_000, return_counts=True)
    np.testing.assert_array_equal(y, n)
    k = np.arange(0, 7)
    observed = np.array([np.sum(y == v) for v in k[:-1]] + [np.sum(y >= k[-1])])
    probs = stats.poisson.pmf(k[:-1], 1.7).tolist()
    probs.append(1.0 - sum(probs))
    assert stats.chisquare(observed, np.array(probs) * y.size).pvalue > 0.001


def test_sample_dlol_domain():
    with pytest.raises(DomainError):
        sample_dlol(1.0, 0.0, RngStream(0))


def test_theta_parse():
    assert Theta.parse("1,2,3,4.5") == Theta(1.0, 2.0, 3.0, 4.5)
    with pytest.raises(DomainError):
        Theta.parse("1,2,3")
    with pytest.raises(DomainError):
        Theta.parse("1,2,3,-1")


def test_kind_aliases():
    assert Kind.parse("cont") is Kind.CONTINUOUS
    assert Kind.parse("disc") is Kind.DISCRETE
    with pytest.raises(DomainError):
        Kind.parse("counts")


def test_stratum_validation():
    with pytest.raises(DomainError):
        Stratum("s", [1.0, -0.5], [1.0, 1.0])
    with pytest.raises(DomainError):
        Stratum("s", [1.0], [0.0])
    with pytest.raises(DomainError):
        Dataset(Kind.DISCRETE, (Stratum("s", [1.5], [1.0]),))


def test_simulate_zero_iff_no_clumps():
    dataset, latent = simulate_hierarchy(URCHIN, uniform_design(38, 14), "cont", RngStream(5))
    for stratum, counts in zip(dataset.strata, latent.n_clumps):
        np.testing.assert_array_equal(stratum.y == 0, counts == 0)


def test_simulate_deterministic():
    design = uniform_design(6, 5, 0.5)
    a, _ = simulate_hierarchy(SUNSTAR, design, "disc", RngStream(9, 1))
    b, _ = simulate_hierarchy(SUNSTAR, design, "disc", RngStream(9, 1))
    pd.testing.assert_frame_equal(a.to_frame(), b.to_frame())


def test_simulate_discrete_integers():
    dataset, latent = simulate_hierarchy(SUNSTAR, uniform_design(10, 8), Kind.DISCRETE, RngStream(2))
    frame = dataset.to_frame()
    assert np.issubdtype(frame["y"].dtype, np.integer)
    assert np.all((latent.mark > 0) & (latent.mark <= 1))


def test_simulate_urchin_regime_zero_fraction():
    # a = b = 1 with unit effort puts P(y = 0) = E exp(-μ) = b / (b + 1) at one half
    fractions = []
    for r in range(40):
        dataset, _ = simulate_hierarchy(URCHIN, uniform_design(38, 14), "cont", RngStream(17, r))
        fractions.append(zero_fraction(dataset))
    p0 = (URCHIN.b / (URCHIN.b + 1.0)) ** URCHIN.a
    assert abs(np.mean(fractions) - p0) < 4 * np.std(fractions) / math.sqrt(len(fractions))
    assert np.median(fractions) >= 0.4


def test_simulate_degenerate_random_effect():
    mu0 = 0.8
    theta = Theta(1e6, 1e6 / mu0, 1e6, 1e6)
    _, latent = simulate_hierarchy(theta, uniform_design(20, 2), "cont", RngStream(4))
    np.testing.assert_allclose(latent.mu, mu0, rtol=0.01)
    np.testing.assert_allclose(latent.mark, 1.0, rtol=0.01)


def test_frame_round_trip():
    dataset, _ = simulate_hierarchy(SUNSTAR, uniform_design(4, 3, 2.0), "cont", RngStream(1))
    back = Dataset.from_frame(dataset.to_frame(), "cont")
    assert back.n_strata == 4
    for s, t in zip(dataset.strata, back.strata):
        assert s.id == t.id
        np.testing.assert_array_equal(s.y, t.y)
        np.testing.assert_array_equal(s.effort, t.effort)


def test_from_frame_names_bad_row():
    frame = pd.DataFrame({"stratum": ["A", "A", "B"], "effort": [1.0, 1.0, 1.0], "y": [0.0, -1.0, 2.0]})
    with pytest.raises(DataFormatError, match="row 2"):
        Dataset.from_frame(frame, "cont")


def test_from_frame_default_effort():
    frame = pd.DataFrame({"stratum": ["A", "B"], "y": [0, 3]})
    dataset = Dataset.from_frame(frame, "disc")
    assert all(np.all(s.effort == 1.0) for s in dataset.strata)


def test_from_frame_missing_column():
    with pytest.raises(DataFormatError, match="stratum"):
        Dataset.from_frame(pd.DataFrame({"y": [1.0]}), "cont")


def test_stratum_from_observations():
    stratum = Stratum.from_observations("A", [Observation(0.0), Observation(2.5, 0.5)])
    np.testing.assert_array_equal(stratum.y, [0.0, 2.5])
    np.testing.assert_array_equal(stratum.effort, [1.0, 0.5])


def test_from_frame_interleaved_strata_keep_first_seen_order():
    frame = pd.DataFrame({"stratum": ["B", "A", "B"], "effort": [1.0, 2.0, 3.0], "y": [1.0, 0.0, 4.0]})
    dataset = Dataset.from_frame(frame, "cont")
    assert [s.id for s in dataset.strata] == ["B", "A"]
    np.testing.assert_array_equal(dataset.strata[0].y, [1.0, 4.0])
    np.testing.assert_array_equal(dataset.strata[0].effort, [1.0, 3.0])
