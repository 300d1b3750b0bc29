import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ebprod.errors import ConvergenceError
from ebprod.likelihood import ArrayDensity
from ebprod.solver import (MixingDistribution, coherence_residual, extract_support, fixed_point_iterate,
                           loglik, posterior_matrix, posterior_row, reduce_support, solve)

from oracles import simplex_max


def test_posterior_row_examples():
    h = posterior_row([5.0, -3.0, 0.0, 9.0], [0, 0, 0, 1])
    np.testing.assert_array_equal(h, [0, 0, 0, 1])
    np.testing.assert_allclose(posterior_row([-2.0] * 4, [0.25] * 4), [0.25] * 4, rtol=0, atol=1e-15)
    h = posterior_row([0.0, -1.0, -2.0], [0.5, 0.3, 0.2])
    raw = [0.5, 0.3 * math.exp(-1), 0.2 * math.exp(-2)]
    expect = [x / sum(raw) for x in raw]
    np.testing.assert_allclose(h, expect, rtol=1e-10)
    assert h.sum() == pytest.approx(1.0, abs=1e-12)


def test_posterior_row_zero_prior_is_exact_zero_and_errors():
    h = posterior_row([-1000.0, 0.0, -5.0], [0.0, 0.5, 0.5])
    assert h[0] == 0.0
    with pytest.raises(ValueError):
        posterior_row([-np.inf, -np.inf], [0.5, 0.5])
    # extreme log scales are handled by shifting
    h = posterior_row([-1e5, -1e5 - 1], [0.5, 0.5])
    assert h[0] == pytest.approx(1 / (1 + math.exp(-1)))


def test_single_type():
    pi, rep = fixed_point_iterate(ArrayDensity(np.array([[-3.0], [-1.0]])))
    assert pi.weights.tolist() == [1.0]
    assert rep.iterations == 1 and rep.converged


def test_two_separated_firms():
    logf = np.array([[0.0, -60.0], [-60.0, 0.0]])
    pi, rep = fixed_point_iterate(ArrayDensity(logf), pi0=MixingDistribution(np.array([0.9, 0.1])))
    assert rep.converged
    # brute-force grid search over the 1-simplex
    grid = np.linspace(1e-6, 1 - 1e-6, 100001)
    ll = np.log(grid + (1 - grid) * math.exp(-60)) + np.log(grid * math.exp(-60) + (1 - grid))
    assert pi.weights[0] == pytest.approx(grid[np.argmax(ll)], abs=1e-5)
    np.testing.assert_allclose(pi.weights, [0.5, 0.5], atol=1e-8)


def test_random_instance_matches_simplex_oracle():
    rng = np.random.default_rng(5)
    logf = rng.normal(0, 2, (5, 10))
    pi, rep = solve(ArrayDensity(logf))
    assert rep.converged
    assert pi.loglik == pytest.approx(simplex_max(logf), abs=1e-6)
    assert pi.support_size <= 5


def test_extract_support_examples():
    p = extract_support(MixingDistribution(np.array([1.0, 0, 0])), 1e-3)
    np.testing.assert_array_equal(p.weights, [1, 0, 0])
    p = extract_support(MixingDistribution(np.array([0.5, 0.5 - 1e-12, 1e-12])), 1e-9)
    assert p.support_size == 2
    assert p.weights.sum() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        extract_support(MixingDistribution(np.array([0.5, 0.5])), 0.9)


def test_solver_errors():
    with pytest.raises(ValueError):
        fixed_point_iterate(ArrayDensity(np.zeros((2, 2))), tol=0)
    with pytest.raises(ConvergenceError):
        fixed_point_iterate(ArrayDensity(np.full((2, 2), -np.inf)))


def test_support_bound_on_simulated_cd(small_cd):
    from conftest import cd_panel
    from ebprod.grid import TypeTable, default_grid
    from ebprod.likelihood import GridDensity
    from ebprod.models import model_from_name
    data = cd_panel(I=200, T=7, seed=9)
    m = model_from_name("cd", 7)
    g = default_grid(m, data, {"alpha0": 8, "beta": 6, "gamma": 6, "alpha1": 1, "alpha2": 1, "s": 3})
    pi, rep = solve(GridDensity(m, data, TypeTable(g)))
    assert rep.converged
    assert pi.support_size <= 200
    assert rep.monotone()


def test_streaming_matches_dense():
    rng = np.random.default_rng(2)
    logf = rng.normal(0, 3, (40, 300))
    src = ArrayDensity(logf)
    a, ra = fixed_point_iterate(src, max_iter=300)
    b, rb = fixed_point_iterate(src, max_iter=300, memory_budget=16 * 40 * 8)
    assert ra.mode == "dense" and rb.mode == "stream"
    np.testing.assert_allclose(a.weights, b.weights, rtol=1e-10, atol=1e-14)


def test_reduce_support_keeps_densities():
    rng = np.random.default_rng(1)
    logf = rng.normal(0, 1, (3, 8))
    src = ArrayDensity(logf)
    w = rng.dirichlet(np.ones(8))
    red = reduce_support(src, MixingDistribution(w))
    # away from the maximum only I + 1 is guaranteed
    assert red.support_size <= 4
    F = np.exp(logf)
    np.testing.assert_allclose(F @ red.weights, F @ w, rtol=1e-10)


def test_reduce_support_at_optimum_reaches_bound():
    rng = np.random.default_rng(4)
    for _ in range(20):
        logf = rng.normal(0, 0.3, (3, 12))
        src = ArrayDensity(logf)
        pi, _ = fixed_point_iterate(src, tol=1e-12, loglik_tol=1e-15, prune_eps=0)
        red = reduce_support(src, pi)
        assert red.support_size <= 3
        assert loglik(src, red.weights) == pytest.approx(loglik(src, pi.weights), abs=1e-9)


def test_restarts_cannot_do_worse():
    rng = np.random.default_rng(3)
    src = ArrayDensity(rng.normal(0, 2, (6, 12)))
    a, _ = solve(src)
    b, _ = solve(src, restarts=3, seed=1)
    assert b.loglik >= a.loglik - 1e-9


instances = st.tuples(st.integers(1, 6), st.integers(1, 12), st.integers(0, 2**31 - 1), st.floats(0.5, 5))


def random_logf(I, Q, seed, scale):
    return np.random.default_rng(seed).normal(0, scale, (I, Q))


@settings(max_examples=60, deadline=None)
@given(instances, st.booleans())
def test_monotone_simplex_and_coherent(inst, accel):
    I, Q, seed, scale = inst
    src = ArrayDensity(random_logf(I, Q, seed, scale))
    pi, rep = fixed_point_iterate(src, accelerate=accel)
    assert rep.monotone(1e-10)
    MixingDistribution(pi.weights).validate(1e-12)
    if rep.converged:
        assert coherence_residual(src, pi) <= 1e-6


@settings(max_examples=40, deadline=None)
@given(instances, st.lists(st.floats(-200, 200), min_size=6, max_size=6))
def test_firm_scale_invariance(inst, shifts):
    I, Q, seed, scale = inst
    logf = random_logf(I, Q, seed, scale)
    shifted = logf + np.array(shifts[:I])[:, None]
    a, _ = fixed_point_iterate(ArrayDensity(logf), max_iter=50)
    b, _ = fixed_point_iterate(ArrayDensity(shifted), max_iter=50)
    np.testing.assert_allclose(a.weights, b.weights, rtol=1e-9, atol=1e-13)


@settings(max_examples=40, deadline=None)
@given(instances, st.randoms(use_true_random=False))
def test_permutation_equivariance(inst, rnd):
    I, Q, seed, scale = inst
    logf = random_logf(I, Q, seed, scale)
    perm = list(range(Q))
    rnd.shuffle(perm)
    perm = np.array(perm)
    a, _ = fixed_point_iterate(ArrayDensity(logf), max_iter=200)
    b, _ = fixed_point_iterate(ArrayDensity(logf[:, perm]), max_iter=200)
    np.testing.assert_allclose(b.weights, a.weights[perm], rtol=1e-9, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(instances)
def test_zero_weights_stay_zero(inst):
    I, Q, seed, scale = inst
    if Q < 2:
        return
    w = np.random.default_rng(seed).dirichlet(np.ones(Q))
    w[0] = 0.0
    w /= w.sum()
    pi, _ = fixed_point_iterate(ArrayDensity(random_logf(I, Q, seed, scale)), MixingDistribution(w), max_iter=100)
    assert pi.weights[0] == 0.0


@settings(max_examples=30, deadline=None)
@given(instances)
def test_posterior_matrix_rows_sum_to_one(inst):
    I, Q, seed, scale = inst
    logf = random_logf(I, Q, seed, scale)
    w = np.random.default_rng(seed + 1).dirichlet(np.ones(Q))
    H = posterior_matrix(logf, w)
    np.testing.assert_allclose(H.sum(axis=1), 1.0, atol=1e-12)
    for i in range(I):
        np.testing.assert_allclose(H[i], posterior_row(logf[i], w), rtol=1e-12, atol=1e-300)
    assert loglik(ArrayDensity(logf), w) == pytest.approx(
        float(np.sum(np.log(np.exp(logf) @ w))), rel=1e-10)
