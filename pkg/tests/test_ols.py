import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ebprod.errors import ConfigError
from ebprod.models import model_from_name
from ebprod.ols import per_firm_ols, pooled_ols, regressors
from ebprod.panel import from_arrays

from conftest import cd_panel


def exact_cd(I, T, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    k = rng.normal(5, 1, (I, T))
    l = rng.normal(3, 1, (I, T))
    coef = np.column_stack([rng.normal(2, 1, I), rng.uniform(0.1, 0.6, I), rng.uniform(0.1, 0.6, I),
                            rng.normal(0, 0.05, I), rng.normal(0, 0.005, I)])
    t = np.arange(1, T + 1, dtype=float)
    y = coef[:, [0]] + coef[:, [1]] * k + coef[:, [2]] * l + coef[:, [3]] * t + coef[:, [4]] * t * t
    if noise:
        y = y + rng.normal(0, noise, (I, T))
    return from_arrays(y, k, l), coef


def test_noiseless_recovery():
    data, coef = exact_cd(20, 7)
    fit = per_firm_ols(data, model_from_name("cd", 7))
    assert fit.rank_ok.all()
    np.testing.assert_allclose(fit.coef, coef, atol=1e-10)
    np.testing.assert_allclose(fit.residual_sd, 0, atol=1e-10)


def test_constant_inputs_flagged():
    data, _ = exact_cd(3, 7)
    k = data.k.copy()
    l = data.l.copy()
    k[1] = 4.0
    l[1] = 2.0
    fit = per_firm_ols(from_arrays(data.y, k, l), model_from_name("cd", 7))
    assert fit.rank_ok.tolist() == [True, False, True]
    assert np.isnan(fit.coef[1]).all()
    assert fit.residual_sd[1] >= 0 and fit.rank[1] == 3


def test_matches_normal_equations():
    data, _ = exact_cd(30, 12, seed=4, noise=0.3)
    m = model_from_name("cd", 12)
    fit = per_firm_ols(data, m)
    X, _ = regressors(data, m)
    for i in range(30):
        A = X[i]
        b = np.linalg.solve(A.T @ A, A.T @ data.y[i])
        np.testing.assert_allclose(fit.coef[i], b, rtol=1e-7, atol=1e-9)
        r = data.y[i] - A @ b
        assert fit.residual_sd[i] == pytest.approx(np.sqrt(r @ r / (12 - 5)), rel=1e-8)


def test_intensive_and_errors():
    data = cd_panel(I=5, T=4)
    fit = per_firm_ols(data, model_from_name("intensive", 4))
    assert fit.names == ("a", "b")
    with pytest.raises(ConfigError):
        per_firm_ols(data, model_from_name("cd", 4))
    with pytest.raises(ConfigError):
        per_firm_ols(data, model_from_name("ces", 4))
    assert set(fit.frame().columns) == {"firm_id", "a", "b", "residual_sd", "rank_ok"}


def test_pooled_is_single_firm_special_case():
    data, _ = exact_cd(6, 7, seed=2, noise=0.2)
    m = model_from_name("cd", 7)
    coef, rsd = pooled_ols(data, m)
    X, names = regressors(data, m)
    b, *_ = np.linalg.lstsq(X.reshape(-1, 5), data.y.ravel(), rcond=None)
    np.testing.assert_allclose([coef[n] for n in names], b, rtol=1e-10)
    assert rsd > 0


def test_small_noise_converges_to_truth():
    data, coef = exact_cd(10, 9, seed=6, noise=1e-7)
    fit = per_firm_ols(data, model_from_name("cd", 9))
    np.testing.assert_allclose(fit.coef[:, 1:3], coef[:, 1:3], atol=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 9999), st.floats(-50, 50))
def test_orthogonality_and_shift_equivariance(seed, c):
    data, _ = exact_cd(4, 8, seed=seed, noise=0.5)
    m = model_from_name("cd", 8)
    fit = per_firm_ols(data, m)
    X, _ = regressors(data, m)
    resid = data.y - np.einsum("itp,ip->it", X, fit.coef)
    scale = np.abs(X).max(axis=1) * np.abs(data.y).max(axis=1, keepdims=True)
    assert np.all(np.abs(np.einsum("itp,it->ip", X, resid)) <= 1e-8 * scale * 8)
    shifted = per_firm_ols(from_arrays(data.y + c, data.k, data.l), m)
    np.testing.assert_allclose(shifted.coef[:, 0], fit.coef[:, 0] + c, atol=1e-7)
    np.testing.assert_allclose(shifted.coef[:, 1:], fit.coef[:, 1:], atol=1e-7)
