import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ebprod.analytics import (anova_decomposition, compute_markups, compute_ttp, dominance_diagnostic,
                              explained_share, markup_summary, size_deciles, violating_pairs_exact)
from ebprod.errors import DataError
from ebprod.models import model_from_name
from ebprod.panel import from_arrays
from ebprod.posterior import FirmPosteriors

from oracles import between_share_brute, violating_pairs_brute, weighted_quantile_brute

CD = model_from_name("cd", 3)


def cd_post(abar, beta, gamma):
    abar, beta, gamma = (np.asarray(v, float) for v in (abar, beta, gamma))
    names = ("alpha0", "beta", "gamma", "alpha1", "alpha2", "s", "abar", "beta+gamma")
    I = len(abar)
    mean = np.column_stack([abar, beta, gamma, np.zeros(I), np.zeros(I), np.full(I, 0.2), abar, beta + gamma])
    return FirmPosteriors([f"f{i}" for i in range(I)], names, mean, np.zeros_like(mean), np.zeros(I, int))


def panel(I, T=3, seed=0, sector=None, wage=None):
    rng = np.random.default_rng(seed)
    return from_arrays(rng.normal(size=(I, T)), rng.normal(size=(I, T)), rng.normal(size=(I, T)),
                       firm_ids=[f"f{i}" for i in range(I)], sector=sector, wage_share=wage)


# --- TTP


def test_ttp_zero_elasticities():
    post = cd_post([1.0, 2.5], [0, 0], [0, 0])
    r = compute_ttp(post, panel(2, sector=np.array(["a", "a"])), CD, reference=(7.0, 3.0))
    np.testing.assert_array_equal(r.ln_ttp, [1.0, 2.5])


def test_ttp_unit_log_inputs():
    post = cd_post([2.0, 1.0], [0.25, 0.5], [0.25, 0.5])
    r = compute_ttp(post, panel(2), CD, reference=(math.e, math.e))
    np.testing.assert_allclose(r.ln_ttp, [2.5, 2.0], atol=1e-15)


def test_ttp_sector_medians_and_summary():
    data = panel(6, sector=np.array(["a", "a", "a", "b", "b", "b"]), seed=3)
    rng = np.random.default_rng(0)
    post = cd_post(rng.normal(size=6), rng.uniform(0, 1, 6), rng.uniform(0, 1, 6))
    r = compute_ttp(post, data, CD)
    for i in range(6):
        m = data.sector == data.sector[i]
        lk, ll = np.median(data.k[m].ravel()), np.median(data.l[m].ravel())
        exp = post.column("abar")[i] + post.column("beta")[i] * lk + post.column("gamma")[i] * ll
        assert r.ln_ttp[i] == pytest.approx(exp, abs=1e-14)
    pooled, by = r.summary()
    assert list(by["sector"]) == ["a", "b"]
    assert pooled["sd_ln_ttp"] == pytest.approx(np.std(r.ln_ttp))


def test_ttp_errors():
    post = cd_post([1.0, 2.0], [0.1, 0.2], [0.1, 0.2])
    with pytest.raises(DataError):
        compute_ttp(post, panel(2), CD)
    with pytest.raises(DataError):
        compute_ttp(post, panel(2), model_from_name("intensive", 3))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.floats(0.1, 50), st.floats(0.1, 50), st.floats(0.05, 20), st.integers(0, 999))
def test_ttp_homogeneity(I, K0, L0, c, seed):
    rng = np.random.default_rng(seed)
    post = cd_post(rng.normal(size=I), rng.uniform(0, 1.5, I), rng.uniform(0, 1.5, I))
    data = panel(I)
    a = compute_ttp(post, data, CD, reference=(K0, L0)).ln_ttp
    b = compute_ttp(post, data, CD, reference=(c * K0, c * L0)).ln_ttp
    np.testing.assert_allclose(b - a, post.column("beta+gamma") * math.log(c), atol=1e-10)


def test_ces_ttp_reduces_to_cd_for_large_sigma_at_equal_inputs():
    names = ("alpha0", "omega", "nu", "sigma", "alpha1", "alpha2", "s", "abar", "nu")
    mean = np.array([[1.0, 0.4, 0.9, 3.0, 0, 0, 0.2, 1.0, 0.9]])
    post = FirmPosteriors(["f0"], names[:-1], mean[:, :-1], np.zeros((1, 8)), np.zeros(1, int))
    r = compute_ttp(post, panel(1), model_from_name("ces", 3), reference=(math.e ** 2, math.e ** 2))
    # equal inputs: composite equals the common log input
    assert r.ln_ttp[0] == pytest.approx(1.0 + 0.9 * 2.0, abs=1e-12)
    assert r.label == "ces-plugin"


# --- markups


def test_markup_examples():
    post = cd_post([0.0], [0.3], [0.5])
    r = compute_markups(post, panel(1, wage=np.full((1, 3), 0.25)), CD)
    np.testing.assert_allclose(r.markup, 2.0)
    g = np.array([0.2, 0.4, 0.6])
    post = cd_post([0, 0, 0], [0, 0, 0], g)
    r = compute_markups(post, panel(3, wage=np.repeat(g[:, None], 3, axis=1)), CD)
    s = r.summary()
    assert s["mean"] == pytest.approx(1.0) and s["sd"] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DataError):
        compute_markups(post, panel(3), CD)


def markup_oracle(gamma, share):
    vals = [gamma[i] / share[i][t] for i in range(len(gamma)) for t in range(len(share[i]))]
    n = len(vals)
    mean = math.fsum(vals) / n
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / n)
    w = np.ones(n)
    p10, p50, p90 = (weighted_quantile_brute(vals, w, p) for p in (0.1, 0.5, 0.9))
    return {"n": n, "mean": mean, "sd": sd, "p50": p50, "p90_p50": p90 / p50, "p90_p10": p90 / p10}


@pytest.mark.parametrize("I", [1, 7, 120, 500])
def test_markup_summary_matches_enumeration(I):
    rng = np.random.default_rng(I)
    gamma = rng.uniform(0.1, 1.2, I)
    share = rng.uniform(0.1, 0.8, (I, 4))
    r = compute_markups(cd_post(np.zeros(I), np.zeros(I), gamma), panel(I, T=4, wage=share), CD)
    got = r.summary()
    exp = markup_oracle(gamma.tolist(), share.tolist())
    for k, v in exp.items():
        assert got[k] == pytest.approx(v, rel=1e-8, abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(0, 9999))
def test_markup_summary_order_invariant(I, seed):
    rng = np.random.default_rng(seed)
    v = rng.lognormal(size=I * 3)
    a = markup_summary(v)
    b = markup_summary(rng.permutation(v))
    for k in a:
        assert a[k] == pytest.approx(b[k], rel=1e-12)


# --- ANOVA


def test_anova_trivial_cases():
    v = np.array([1.0, 2.0, 3.0, 4.0])
    assert explained_share(v, {"g": np.array(["a"] * 4)})[0] == 0.0
    assert explained_share(v, {"g": np.array(["a", "b", "c", "d"])})[0] == pytest.approx(1.0)
    assert explained_share(np.ones(4), {"g": np.array(["a", "a", "b", "b"])}) == (0.0, 1)


@pytest.mark.parametrize("I", [10, 100, 500])
def test_anova_matches_between_ss(I):
    rng = np.random.default_rng(I)
    labels = rng.integers(0, 7, I).astype(str)
    v = rng.normal(size=I) + 0.3 * labels.astype(float)
    got, df = explained_share(v, {"sector": labels})
    assert got == pytest.approx(between_share_brute(v, labels.tolist()), abs=1e-8)
    assert df == len(set(labels)) - 1
    # the multi-factor path agrees on a single factor through lstsq
    got2, _ = explained_share(v, {"sector": labels, "dummy": np.zeros(I)})
    assert got2 == pytest.approx(got, abs=1e-8)


def test_anova_under_independence():
    rng = np.random.default_rng(0)
    I, G = 1000, 20
    shares = [explained_share(rng.normal(size=I), {"s": rng.integers(0, G, I)})[0] for _ in range(200)]
    expected = (G - 1) / (I - 1)
    # R^2 under the null is Beta((G-1)/2, (I-G)/2); its SD over 200 draws is ~0.0004
    assert abs(np.mean(shares) - expected) < 0.002


def test_anova_decomposition_frame():
    I = 60
    rng = np.random.default_rng(2)
    sector = np.array([f"s{i % 4}" for i in range(I)])
    data = panel(I, sector=sector)
    post = cd_post(rng.normal(size=I), rng.uniform(size=I), rng.uniform(size=I))
    a = anova_decomposition(post, data, CD, "sector")
    b = anova_decomposition(post, data, CD, "sector+size")
    c = anova_decomposition(post, data, CD, "sector+size", size_mode="joint")
    assert list(a["parameter"]) == ["abar", "beta", "gamma"]
    assert (a["size_mode"] == "").all() and (b["size_mode"] == "additive").all()
    assert np.all(b["explained_share"].to_numpy() >= a["explained_share"].to_numpy() - 1e-12)
    assert np.all(c["explained_share"].between(0, 1))
    dec = size_deciles(data)
    assert set(dec) == {"y_decile", "k_decile", "l_decile"}
    assert len(set(dec["y_decile"])) == 10


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 80), st.integers(1, 6), st.integers(1, 6), st.integers(0, 9999))
def test_anova_bounded_and_monotone(I, g1, g2, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=I)
    f1 = rng.integers(0, g1, I)
    f2 = rng.integers(0, g2, I)
    one, _ = explained_share(v, {"a": f1})
    two, _ = explained_share(v, {"a": f1, "b": f2})
    assert 0.0 <= one <= 1.0 and 0.0 <= two <= 1.0
    assert two >= one - 1e-10


# --- dominance


def test_dominance_pairs():
    m = model_from_name("cd", 3)
    d = dominance_diagnostic(cd_post([1.0, 2.0], [0.5, 0.1], [0.5, 0.1]), m)
    assert d["violating_share"] == 0.0
    d = dominance_diagnostic(cd_post([1.0, 2.0], [0.1, 0.5], [0.1, 0.5]), m)
    assert d["violating_share"] == 1.0
    with pytest.raises(ValueError):
        dominance_diagnostic(cd_post([1.0], [0.1], [0.1]), m)


@pytest.mark.parametrize("I", [2, 50, 500])
def test_dominance_fast_equals_enumeration(I, backend):
    rng = np.random.default_rng(I)
    a = np.round(rng.normal(size=I), 1)   # rounding forces ties
    b = np.round(rng.normal(size=I), 1)
    post = cd_post(a, b / 2, b / 2)
    fast = dominance_diagnostic(post, CD, "fast")
    brute = violating_pairs_brute(a.tolist(), (b / 2 + b / 2).tolist())
    assert fast["violating_pairs"] == brute
    assert fast == dominance_diagnostic(post, CD, "exact") or math.isnan(fast["corr_intercept_scale"])
    assert fast["violating_share"] == pytest.approx(brute / (I * (I - 1) / 2), abs=1e-12)
    assert fast["violating_share"] + fast["non_violating_share"] == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=2, max_size=40))
def test_dominance_property(pairs):
    a = np.array([p[0] for p in pairs], float)
    b = np.array([p[1] for p in pairs], float)
    post = cd_post(a, b, np.zeros_like(b))
    d = dominance_diagnostic(post, CD)
    assert d["violating_pairs"] == violating_pairs_exact(a, b)
    assert d["violating_share"] + d["non_violating_share"] == pytest.approx(1.0)
