import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ebprod.models import (InadmissibleParams, check_admissible, mean_output, model_from_name,
                           returns_to_scale, time_avg_intercept)

CD = model_from_name("cd", 7)
CES = model_from_name("ces", 7)
INT = model_from_name("intensive", 7)


def test_param_layout():
    assert CD.param_names == ("alpha0", "beta", "gamma", "alpha1", "alpha2", "s")
    assert CES.param_names == ("alpha0", "omega", "nu", "sigma", "alpha1", "alpha2", "s")
    assert INT.param_names == ("a", "b", "s")
    for m in (CD, CES, INT):
        assert m.param_names[-1] == "s"
    with pytest.raises(ValueError):
        model_from_name("translog", 3)


def test_cd_mean_examples():
    assert mean_output(CD, [1, 0, 0, 0, 0, 1], 3.3, -2.0, 5) == 1.0
    assert mean_output(CD, [0, 0.5, 0.5, 0, 0, 1], 2.0, 4.0, 1) == 3.0
    assert mean_output(INT, [1.0, 0.5, 1], 2.0, 99.0, 1) == 2.0


def test_ces_large_sigma_tends_to_linear_aggregation():
    # omega K^rho + (1-omega) L^rho with K = L = e: ln(e^rho)/rho = 1 for any sigma
    v = mean_output(CES, [0, 0.5, 1.0, 1e6, 0, 0, 1], 1.0, 1.0, 1)
    assert v == pytest.approx(1.0, abs=1e-12)
    # unequal inputs: compare to the high-precision limit ln(omega K + (1-omega) L)
    sigma = 1e6
    rho = (sigma - 1) / sigma
    exact = math.log(0.5 * math.exp(rho * 2.0) + 0.5 * math.exp(rho * 0.5)) / rho
    got = mean_output(CES, [0, 0.5, 1.0, sigma, 0, 0, 1], 2.0, 0.5, 1)
    assert got == pytest.approx(exact, rel=1e-12)


@pytest.mark.parametrize("sigma", [1 - 1e-3 - 1e-9, 1 + 1e-3 + 1e-9])
def test_ces_near_unit_sigma_approaches_cd(sigma):
    om, nu, k, l = 0.3, 0.9, 2.0, 1.0
    ces = mean_output(CES, [0.5, om, nu, sigma, 0, 0, 1], k, l, 1)
    cd = mean_output(CD, [0.5, nu * om, nu * (1 - om), 0, 0, 1], k, l, 1)
    # the gap is first order in (sigma - 1): nu * om(1-om)(k-l)^2 (1-1/sigma)/2
    assert abs(ces - cd) < 1e-3


def test_ces_rejects_unit_sigma_band():
    with pytest.raises(InadmissibleParams):
        check_admissible(CES, [0, 0.5, 1, 1.0005, 0, 0, 1])


def test_time_avg_intercept():
    assert time_avg_intercept(model_from_name("cd", 4), [2, 0.3, 0.3, 0, 0, 1]) == 2.0
    assert time_avg_intercept(model_from_name("cd", 3), [0, 0, 0, 1, 0, 1]) == pytest.approx(2.0)
    T = 11
    brute = sum(1 + 0.025 * t - 0.002 * t * t for t in range(1, T + 1)) / T
    got = time_avg_intercept(model_from_name("cd", T), [1, 0.4, 0.7, 0.025, -0.002, 0.3])
    assert got == pytest.approx(brute, abs=1e-14)
    with pytest.raises(ValueError):
        time_avg_intercept(INT, [1, 1, 1])


def test_returns_to_scale():
    assert returns_to_scale(CD, [3.5, 0.425, 0.789, 0, 0, 0.2]) == pytest.approx(1.214)
    assert returns_to_scale(CES, [4.013, 0.342, 0.691, 1.736, 0.013, -0.0001, 0.192]) == pytest.approx(0.691)
    assert returns_to_scale(INT, [1.0, 0.0, 0.3]) == 0.0


def test_admissibility():
    with pytest.raises(InadmissibleParams):
        check_admissible(CD, [0, -0.1, 0.2, 0, 0, 1])
    with pytest.raises(InadmissibleParams):
        check_admissible(CD, [0, 0.1, 0.2, 0, 0, 0.01])
    with pytest.raises(InadmissibleParams):
        check_admissible(CES, [0, 1.2, 1, 2, 0, 0, 1])
    with pytest.raises(InadmissibleParams):
        check_admissible(CD, [0, 0.1, 0.2])


finite = st.floats(-10, 10, allow_nan=False)
elast = st.floats(0, 2, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(finite, elast, elast, finite, finite, st.floats(0, 3))
def test_cd_is_linear_and_monotone(a0, b, g, k, l, delta):
    p = [a0, b, g, 0.01, -0.001, 0.3]
    base = mean_output(CD, p, k, l, 2)
    assert mean_output(CD, p, k + delta, l, 2) - base == pytest.approx(b * delta, abs=1e-9)
    assert mean_output(CD, p, k + delta, l + delta, 2) >= base - 1e-12


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0, 2), st.sampled_from([0.3, 0.7, 1.5, 3.0, 5.5]),
       st.floats(-5, 12), st.floats(-5, 12), st.floats(-3, 3))
def test_ces_homogeneity(om, nu, sigma, k, l, c):
    p = [0.2, om, nu, sigma, 0, 0, 0.5]
    diff = mean_output(CES, p, k + c, l + c, 1) - mean_output(CES, p, k, l, 1)
    assert diff == pytest.approx(nu * c, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       st.floats(-2, 2), st.integers(2, 12))
def test_time_avg_is_linear(u, v, c, T):
    m = model_from_name("cd", T)
    P = lambda x: [x[0], 0.3, 0.3, x[1], x[2], 1.0]  # noqa: E731
    lhs = time_avg_intercept(m, P([u[i] + c * v[i] for i in range(3)]))
    rhs = time_avg_intercept(m, P(u)) + c * time_avg_intercept(m, P(v))
    assert lhs == pytest.approx(rhs, abs=1e-9)
