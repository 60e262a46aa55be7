"""Test the gamma and beta M-step solvers and the Q function"""

import math

import numpy as np
import pytest

from src.core.exceptions import MStepInfeasibleError
from src.core.model import Kind, Theta
from src.core.mstep import (
    MStepInput,
    maximize,
    q_value,
    solve_beta_pair,
    solve_gamma_pair,
    solve_gamma_shape,
)
from src.core.specfun import RngStream, digamma


def _gamma_moments(shape, rate):
    return shape / rate, digamma(shape) - math.log(rate)


def _beta_moments(c, d):
    return digamma(c) - digamma(c + d), digamma(d) - digamma(c + d)


def test_gamma_pair_exact_moments():
    shape, rate, _ = solve_gamma_pair(*_gamma_moments(3.0, 2.0))
    assert shape == pytest.approx(3.0, rel=1e-10)
    assert rate == pytest.approx(2.0, rel=1e-10)


def test_gamma_pair_small_shape():
    shape, rate, _ = solve_gamma_pair(*_gamma_moments(0.5, 1.3))
    assert (shape, rate) == pytest.approx((0.5, 1.3), rel=1e-9)


def test_gamma_round_trip_random():
    gen = RngStream(31).generator
    for shape, rate in gen.uniform(0.2, 20.0, size=(100, 2)):
        got_shape, got_rate, _ = solve_gamma_pair(*_gamma_moments(shape, rate))
        assert got_shape == pytest.approx(shape, rel=1e-8)
        assert got_rate == pytest.approx(rate, rel=1e-8)


@pytest.mark.parametrize("C", np.logspace(-3, 1, 25))
def test_gamma_shape_iteration_count(C):
    shape, iterations = solve_gamma_shape(C)
    assert iterations <= 30
    assert abs(math.log(shape) - digamma(shape) - C) <= 1e-12


def test_gamma_shape_infeasible():
    with pytest.raises(MStepInfeasibleError):
        solve_gamma_shape(0.0)
    with pytest.raises(MStepInfeasibleError):
        solve_gamma_shape(-0.1)
    with pytest.raises(MStepInfeasibleError):
        solve_gamma_shape(1e-10)


@pytest.mark.parametrize("c, d", [(2.0, 5.0), (0.5, 0.5), (1.9, 0.9), (12.0, 0.4)])
def test_beta_pair_exact_moments(c, d):
    got_c, got_d, _ = solve_beta_pair(*_beta_moments(c, d))
    assert (got_c, got_d) == pytest.approx((c, d), rel=1e-8)


def test_beta_pair_symmetric():
    c, d, _ = solve_beta_pair(math.log(0.4), math.log(0.4))
    assert c == pytest.approx(d, rel=1e-10)


def test_beta_round_trip_random():
    gen = RngStream(32).generator
    for c, d in gen.uniform(0.3, 10.0, size=(100, 2)):
        got_c, got_d, iterations = solve_beta_pair(*_beta_moments(c, d))
        assert (got_c, got_d) == pytest.approx((c, d), rel=1e-8)
        assert iterations < 200


@pytest.mark.parametrize("L1, L2", [(0.0, -1.0), (-1.0, 0.1), (math.log(0.6), math.log(0.6))])
def test_beta_pair_infeasible(L1, L2):
    with pytest.raises(MStepInfeasibleError):
        solve_beta_pair(L1, L2)


def _input_from(theta: Theta, kind: Kind, S: int = 10) -> MStepInput:
    e_mu, e_ln_mu = _gamma_moments(theta.a, theta.b)
    if kind is Kind.CONTINUOUS:
        m1, m2 = _gamma_moments(theta.c, theta.d)
    else:
        m1, m2 = _beta_moments(theta.c, theta.d)
    return MStepInput(S, e_mu, e_ln_mu, m1, m2, kind)


@pytest.mark.parametrize("kind", [Kind.CONTINUOUS, Kind.DISCRETE])
def test_maximize_recovers_generating_theta(kind):
    truth = Theta(1.9, 1.8, 1.9, 0.9)
    theta, report = maximize(_input_from(truth, kind))
    np.testing.assert_allclose(theta.as_array(), truth.as_array(), rtol=1e-8)
    assert report.flags == []


@pytest.mark.parametrize("kind", [Kind.CONTINUOUS, Kind.DISCRETE])
def test_q_ascent(kind):
    inp = _input_from(Theta(2.0, 1.5, 3.0, 2.0), kind)
    best, _ = maximize(inp)
    gen = RngStream(33).generator
    for values in gen.uniform(0.2, 6.0, size=(50, 4)):
        assert q_value(best, inp) >= q_value(Theta.from_array(values), inp)


@pytest.mark.parametrize("kind", [Kind.CONTINUOUS, Kind.DISCRETE])
def test_q_stationary_at_maximum(kind):
    inp = _input_from(Theta(0.8, 1.2, 2.5, 4.0), kind)
    best, _ = maximize(inp)
    h = 1e-6
    for k in range(4):
        up, down = best.as_array(), best.as_array()
        up[k] += h
        down[k] -= h
        slope = (q_value(Theta.from_array(up), inp) - q_value(Theta.from_array(down), inp)) / (2 * h)
        assert abs(slope) < 1e-5 * inp.S


def test_q_value_unit_gamma_prior():
    inp = MStepInput(4, 0.7, -0.6, 1.1, -0.2, Kind.CONTINUOUS)
    theta = Theta(1.0, 1.0, 1.0, 1.0)
    assert q_value(theta, inp) == pytest.approx(4 * (-0.7 - 1.1))


def test_maximize_keeps_previous_block():
    previous = Theta(1.0, 2.0, 3.0, 4.0)
    # log of the mean below the mean log is impossible under Jensen: no gamma fits
    inp = MStepInput(3, 1.0, 0.5, *_gamma_moments(2.0, 1.0), Kind.CONTINUOUS)
    theta, report = maximize(inp, previous)
    assert (theta.a, theta.b) == (1.0, 2.0)
    assert (theta.c, theta.d) == pytest.approx((2.0, 1.0), rel=1e-8)
    assert report.flags == ["mu_block_infeasible"]


def test_maximize_raises_without_previous():
    inp = MStepInput(3, 1.0, 0.5, *_gamma_moments(2.0, 1.0), Kind.CONTINUOUS)
    with pytest.raises(MStepInfeasibleError):
        maximize(inp)
