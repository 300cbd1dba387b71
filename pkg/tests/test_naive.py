import math

import numpy as np
import pytest
from hypothesis import given, settings

import oracles
from conftest import make_data, small_instances
from signal_level.datamodel import LabeledDataset
from signal_level.errors import NotWhitenedError
from signal_level.naive import (
    Estimate,
    beta_sq_hat,
    beta_sq_hat_all,
    dicker_tau2,
    estimate_naive,
    naive_value,
    normal_interval,
    sigma2_hat,
    ustat_components,
    var_naive_gaussian_hat,
    var_naive_ustat_hat,
    w_matrix,
)
from signal_level.whitening import CovariateModel


@settings(max_examples=60, deadline=None)
@given(small_instances(min_n=2))
def test_beta_sq_and_naive_match_loops(d):
    w = w_matrix(d)
    np.testing.assert_allclose(w.w, oracles.w_loop(d.x, d.y), rtol=1e-14)
    for j in range(d.p):
        assert oracles.rel_close(beta_sq_hat(w, j), oracles.beta_sq_loop(w.w, j))
        assert oracles.rel_close(beta_sq_hat_all(w)[j], oracles.beta_sq_loop(w.w, j))
    assert oracles.rel_close(naive_value(w), oracles.naive_loop(w.w))


def test_naive_equals_sum_of_beta_sq(toy):
    w = w_matrix(toy)
    assert naive_value(w) == pytest.approx(beta_sq_hat_all(w).sum(), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(small_instances())
def test_ustat_components_match_loops(d):
    w = w_matrix(d)
    got = ustat_components(w)
    want = oracles.ustat_components_loop(w.w)
    for a, b in zip(got, want):
        assert oracles.rel_close(a, b, 1e-9)
    # the combination subtracts nearly equal terms, so scale the tolerance by their size
    scale = max(abs(v) for v in want) * 4 / d.n
    assert abs(var_naive_ustat_hat(w) - oracles.var_naive_ustat_loop(w.w)) <= 1e-9 * scale + 1e-13


@settings(max_examples=40, deadline=None)
@given(small_instances())
def test_dicker_matches_loop(d):
    assert oracles.rel_close(dicker_tau2(d), oracles.dicker_loop(d.x, d.y))


def test_gaussian_variance_frozen_values():
    # exact rational evaluation of the closed form, frozen
    assert var_naive_gaussian_hat(1.0, 2.0, 300, 300) == pytest.approx(0.06686733556298774, rel=1e-12)
    assert var_naive_gaussian_hat(1.0, 2.0, 100, 100) == pytest.approx(0.2018181818181818, rel=1e-12)
    # leading term 20/n
    assert var_naive_gaussian_hat(1.0, 2.0, 10**6, 10**6) * 10**6 == pytest.approx(20.0, rel=1e-4)


def test_scaling_by_c_scales_tau2_by_c_squared(toy):
    c = 3.7
    w1 = w_matrix(toy)
    w2 = w_matrix(toy.with_response(c * toy.y))
    assert naive_value(w2) == pytest.approx(c * c * naive_value(w1), rel=1e-12)


def test_permutation_invariance(toy):
    perm = np.random.default_rng(0).permutation(toy.n)
    a = naive_value(w_matrix(toy))
    b = naive_value(w_matrix(toy.take_rows(perm)))
    assert a == pytest.approx(b, rel=1e-12)


def test_zero_response_gives_zero():
    d = make_data(1, 8, 3).with_response(np.zeros(8))
    assert naive_value(w_matrix(d)) == 0.0


def test_unwhitened_raises_without_model():
    d = make_data(1, 8, 3, whitened=False)
    with pytest.raises(NotWhitenedError):
        w_matrix(d)
    assert naive_value(w_matrix(d, assume_whitened=True)) == naive_value(w_matrix(make_data(1, 8, 3)))
    assert naive_value(w_matrix(d, CovariateModel.identity(3))) == pytest.approx(
        naive_value(w_matrix(make_data(1, 8, 3))), rel=1e-14
    )


def test_too_few_rows():
    d = LabeledDataset(np.ones((1, 2)), np.ones(1), whitened=True)
    with pytest.raises(ValueError):
        naive_value(w_matrix(d))


def test_variance_clamp_flag():
    e = Estimate(value=1.0, method="naive").with_variance(-0.5)
    assert e.variance_hat == 0.0
    assert e.raw_variance_hat == -0.5
    assert "negative_variance_clamped" in e.flags
    lo, hi = normal_interval(Estimate(value=1.0, method="naive").with_variance(0.04))
    assert lo == pytest.approx(1 - 1.959963984540054 * 0.2)
    assert hi == pytest.approx(1 + 1.959963984540054 * 0.2)
    assert normal_interval(Estimate(value=1.0, method="naive")) is None


def test_sigma2_flags_negative():
    d = make_data(3, 10, 2)
    big = Estimate(value=1e6, method="naive")
    s = sigma2_hat(d, big)
    assert s.value < 0 and "negative_value" in s.flags
    assert s.value == pytest.approx(np.var(d.y, ddof=1) - 1e6)


def test_estimate_naive_variance_modes(toy):
    g = estimate_naive(toy, "gaussian")
    u = estimate_naive(toy, "ustat")
    assert g.value == u.value
    assert g.raw_variance_hat == pytest.approx(
        var_naive_gaussian_hat(g.value, np.var(toy.y, ddof=1), toy.n, toy.p)
    )
    assert estimate_naive(toy, None).variance_hat is None
    with pytest.raises(ValueError):
        estimate_naive(toy, "bogus")


def test_naive_unbiased_monte_carlo():
    rng = np.random.default_rng(11)
    beta = np.array([0.5, -0.3, 0.2, 0.0])
    vals = []
    for _ in range(3000):
        x = rng.standard_normal((20, 4))
        y = x @ beta + rng.standard_normal(20)
        vals.append(naive_value(w_matrix(LabeledDataset(x, y, whitened=True))))
    vals = np.array(vals)
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - beta @ beta) < 4 * se
