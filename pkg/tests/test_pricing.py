import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import ndtr

from oracles import binomial_call, quad_theta_integral
from panopt.errors import DomainError
from panopt.pricing import (bs_call_price, bs_theta, effective_dte, gamma_cap, implied_vol,
                            max_effective_dte, range_for_dte, theta_integral)


def test_theta_at_the_money_closed_form():
    k = 2000.0
    assert bs_theta(k, k, 1.0, 1.0) == pytest.approx(k / math.sqrt(8 * math.pi) * math.exp(-1 / 8), rel=1e-14)


def test_theta_vanishes_as_spot_goes_to_zero():
    assert bs_theta(1e-9, 100.0, 1.0, 0.1) == pytest.approx(0.0, abs=1e-300)


def otm_price(s, k, sigma, t):
    # zero-rate parity: the put differs from the call by s - k, so both share dC/dt;
    # differencing the out-of-the-money one avoids cancellation against intrinsic value
    if s <= k:
        return bs_call_price(s, k, sigma, t)
    v = sigma * math.sqrt(t)
    d1 = math.log(s / k) / v + v / 2
    return k * ndtr(-(d1 - v)) - s * ndtr(-d1)


def fd_theta(s, k, sigma, t):
    # five-point stencil: O(h^4) truncation lets h stay large enough to avoid round-off
    h = t * 2e-3
    c = [otm_price(s, k, sigma, t + j * h) for j in (-2, -1, 1, 2)]
    return (c[0] - 8 * c[1] + 8 * c[2] - c[3]) / (12 * h)


@settings(max_examples=300, deadline=None)
@given(s=st.floats(50, 200), k=st.floats(50, 200), sigma=st.floats(0.1, 2.0), t=st.floats(0.01, 2.0))
def test_theta_is_time_derivative_of_price(s, k, sigma, t):
    want = fd_theta(s, k, sigma, t)
    if want < 1e-12 * s:  # theta underflows relative to spot
        return
    assert bs_theta(s, k, sigma, t) == pytest.approx(want, rel=1e-5)


def test_call_price_limits():
    assert bs_call_price(110.0, 100.0, 0.5, 0.0) == 10.0
    assert bs_call_price(90.0, 100.0, 0.5, 0.0) == 0.0
    assert bs_call_price(100.0, 100.0, 1e-12, 1e-12) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("s,k,sigma,t", [(100, 100, 1.0, 7 / 365), (100, 110, 0.6, 0.5),
                                         (100, 90, 0.3, 1.0), (2000, 2400, 1.0, 30 / 365)])
def test_call_price_matches_binomial_tree(s, k, sigma, t):
    assert bs_call_price(s, k, sigma, t) == pytest.approx(binomial_call(s, k, sigma, t), rel=1e-4)


def test_call_price_vectorized():
    s = np.array([90.0, 100.0, 110.0])
    out = bs_call_price(s, 100.0, 1.0, 0.1)
    assert out.shape == (3,)
    assert out[1] == bs_call_price(100.0, 100.0, 1.0, 0.1)


@pytest.mark.parametrize("s,k,sigma,t", [(100, 100, 1.0, 7 / 365), (100, 130, 0.8, 0.25),
                                         (1.0, 1.5, 2.0, 3.0), (100, 101, 0.2, 0.01)])
def test_theta_integral_recovers_price(s, k, sigma, t):
    want = bs_call_price(s, k, sigma, t)
    assert quad_theta_integral(s, k, sigma, t) == pytest.approx(want, rel=1e-6)
    assert theta_integral(s, k, sigma, t) == pytest.approx(want, rel=1e-6)


def test_theta_integral_in_the_money_is_time_value():
    want = bs_call_price(100, 90, 0.8, 0.5) - 10.0
    assert theta_integral(100, 90, 0.8, 0.5) == pytest.approx(want, rel=1e-7)


def test_effective_dte_examples():
    assert effective_dte(1.0, 1.0) == 0.0
    assert effective_dte(1.2, 1.0) == pytest.approx(0.0130, abs=5e-5)
    r = 1.2
    closed = 2 * math.pi * ((math.sqrt(r) - 1) / (math.sqrt(r) + 1)) ** 2
    assert effective_dte(r, 1.0) == pytest.approx(closed, rel=1e-13)


@given(sigma=st.floats(0.05, 5.0), a=st.floats(1.0, 1e4), b=st.floats(1.0, 1e4))
def test_effective_dte_monotone_and_bounded(sigma, a, b):
    lo, hi = sorted((a, b))
    assert effective_dte(lo, sigma) <= effective_dte(hi, sigma) <= max_effective_dte(sigma)


def test_effective_dte_strictly_increasing_example():
    for sigma in (0.3, 1.0, 3.0):
        assert effective_dte(1.5, sigma) > effective_dte(1.2, sigma)


@settings(max_examples=100)
@given(sigma=st.floats(0.1, 3.0), frac=st.floats(0.0, 0.99))
def test_range_for_dte_round_trip(sigma, frac):
    t = frac * max_effective_dte(sigma)
    assert effective_dte(range_for_dte(t, sigma), sigma) == pytest.approx(t, rel=1e-12, abs=1e-15)


def test_range_for_dte_edges():
    assert range_for_dte(0.0, 1.0) == 1.0
    assert range_for_dte(0.5, 1.0) > range_for_dte(0.1, 1.0)
    with pytest.raises(DomainError):
        range_for_dte(max_effective_dte(1.0), 1.0)
    with pytest.raises(DomainError):
        effective_dte(0.9, 1.0)


def test_gamma_cap():
    assert gamma_cap(2000.0, math.e) == pytest.approx(2 / (2000 * math.pi), rel=1e-15)
    assert gamma_cap(4000.0, 1.5) == pytest.approx(gamma_cap(2000.0, 1.5) / 2, rel=1e-15)
    assert gamma_cap(2000.0, 1e300) < 1e-5
    with pytest.raises(DomainError):
        gamma_cap(2000.0, 1.0)


def test_implied_vol():
    assert implied_vol(0.0, 1e6, 1e5) == 0.0
    assert implied_vol(0.003, 5.0, 5.0) == pytest.approx(0.006)
    assert implied_vol(0.003, 4e6, 1e5) == pytest.approx(2 * implied_vol(0.003, 1e6, 1e5))
    with pytest.raises(DomainError):
        implied_vol(0.003, 1.0, 0.0)


def test_domain_errors():
    with pytest.raises(DomainError):
        bs_theta(100.0, 100.0, 1.0, 0.0)
    with pytest.raises(DomainError):
        bs_call_price(100.0, -1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        theta_integral(1.0, 1.0, 1.0, 1.0, n=0)
