import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import make_data, small_instances
from signal_level.datamodel import LabeledDataset, UnlabeledDataset
from signal_level.errors import DegenerateZeroEstimatorError, NotWhitenedError
from signal_level.naive import naive_tau2, naive_value, w_matrix
from signal_level.zeroest import (
    ANALYTIC,
    EMPIRICAL,
    SelectionResult,
    c_hat,
    c_hat_numerator,
    custom_zero_stat,
    gap_selection,
    improve_single,
    monomial_zero_stat,
    oracle_ooe,
    oracle_single,
    pairwise_g,
    pairwise_zero_stat,
    psi_hat,
    psi_sum,
    select,
    selection_estimator,
    split_halves,
    t_selection_linear,
    theta_pairwise,
    var_pairwise_zero,
    var_selection_hat,
    var_single_hat,
)


@settings(max_examples=50, deadline=None)
@given(small_instances(min_n=2), st.data())
def test_pairwise_g_and_c_numerator_match_loops(d, data):
    s = sorted(data.draw(st.sets(st.integers(0, d.p - 1), min_size=min(2, d.p))))
    g = pairwise_g(d.x, s)
    np.testing.assert_allclose(g, oracles.pairwise_g_loop(d.x, s), rtol=1e-12, atol=1e-14)
    w = w_matrix(d)
    got = c_hat_numerator(w, g)
    want = oracles.c_numerator_loop(w.w, g)
    scale = float(np.abs(w.w).sum(axis=1) @ np.abs(w.w).sum(axis=1)) * float(np.abs(g).max() + 1)
    assert abs(got - want) <= 1e-12 * scale


@settings(max_examples=40, deadline=None)
@given(small_instances(), st.data())
def test_psi_match_loops(d, data):
    w = w_matrix(d)
    s = sorted(data.draw(st.sets(st.integers(0, d.p - 1))))
    for j in range(d.p):
        for k in range(d.p):
            assert oracles.rel_close(psi_hat(w, d, j, k), oracles.psi_loop(w.w, d.x, j, k), 1e-9)
    want = sum(oracles.psi_loop(w.w, d.x, j, k) for j in s for k in s)
    scale = sum(abs(oracles.psi_loop(w.w, d.x, j, k)) for j in s for k in s) + 1e-300
    assert abs(psi_sum(w, d, s) - want) <= 1e-9 * scale + 1e-14


@settings(max_examples=40, deadline=None)
@given(small_instances(min_n=2))
def test_oracle_ooe_matches_loop(d):
    beta = np.linspace(-1, 1, d.p)
    got = oracle_ooe(w_matrix(d), d, beta).value
    assert oracles.rel_close(got, oracles.oracle_ooe_loop(w_matrix(d).w, d.x, beta), 1e-9)


def test_var_pairwise_analytic():
    assert var_pairwise_zero(None, 5) == 10.0
    assert var_pairwise_zero([0, 3], 5) == 1.0
    with pytest.raises(DegenerateZeroEstimatorError):
        var_pairwise_zero([1], 5)


def test_var_pairwise_empirical():
    rng = np.random.default_rng(0)
    u = UnlabeledDataset(rng.standard_normal((40000, 4)), whitened=True)
    v = var_pairwise_zero(None, 4, EMPIRICAL, u)
    assert v == pytest.approx(6.0, rel=0.05)
    with pytest.raises(ValueError):
        var_pairwise_zero(None, 4, EMPIRICAL, None)
    with pytest.raises(NotWhitenedError):
        var_pairwise_zero(None, 4, EMPIRICAL, UnlabeledDataset(u.x))


def test_zero_stat_requires_whitened():
    with pytest.raises(NotWhitenedError):
        pairwise_zero_stat(make_data(0, 5, 3, whitened=False))


def test_zero_stat_fields(toy):
    z = pairwise_zero_stat(toy)
    assert z.covers_all and z.var_g == 3.0 and z.var_source == ANALYTIC
    assert z.value == pytest.approx(pairwise_g(toy.x, [0, 1, 2]).mean())
    zs = pairwise_zero_stat(toy, [0, 2])
    assert not zs.covers_all and zs.index_set == (0, 2)


def test_pairwise_zero_mean_monte_carlo():
    rng = np.random.default_rng(5)
    vals = np.array([pairwise_g(rng.exponential(size=(30, 4)) - 1.0, range(4)).mean()
                     for _ in range(2000)])
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean()) < 4 * se


def test_improve_single_arithmetic(toy):
    w = w_matrix(toy)
    z = pairwise_zero_stat(toy)
    c = c_hat(w, toy, z)
    e = improve_single(naive_tau2(w), c, z)
    assert e.value == pytest.approx(naive_value(w) - c * z.value, rel=1e-14)
    assert e.method == "single" and e.details["c"] == c
    e2 = improve_single(naive_tau2(w), 0.5, pairwise_zero_stat(toy, [0, 1]))
    assert e2.method == "selection_h" and e2.selection_set == (0, 1)


def test_c_hat_unbiased_for_linear_model():
    rng = np.random.default_rng(9)
    beta = np.array([1.0, 0.5, 0.0, 0.0])
    c_star = 2 * beta @ theta_pairwise(beta) / 6.0
    vals = []
    for _ in range(300):
        x = rng.standard_normal((500, 4))
        d = LabeledDataset(x, x @ beta + rng.standard_normal(500), whitened=True)
        vals.append(c_hat(w_matrix(d), d, pairwise_zero_stat(d)))
    vals = np.array(vals)
    assert abs(vals.mean() - c_star) < 4 * vals.std(ddof=1) / math.sqrt(vals.size)


def test_theta_pairwise():
    beta = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(theta_pairwise(beta), [9, 8, 7, 6])
    np.testing.assert_array_equal(theta_pairwise(beta, [0, 2]), [3, 0, 1, 0])


def test_gap_selection_examples():
    assert gap_selection([0.01, 0.9, 0.02, 1.0, 0.0]).set == (1, 3)
    # ties in the largest gap go to the lowest position (selects more)
    assert gap_selection([0.0, 1.0, 2.0]).set == (1, 2)
    assert gap_selection([3.0, 3.0]).set == (0, 1)
    with pytest.raises(ValueError):
        gap_selection([1.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=30))
def test_gap_selection_properties(b):
    sel = gap_selection(b).set
    assert sel
    arr = np.asarray(b)
    chosen = arr[list(sel)]
    rest = np.delete(arr, list(sel))
    assert rest.size == 0 or chosen.min() > rest.max()
    # invariant under positive rescaling
    assert gap_selection(arr * 3.5).set == sel


def test_split_halves_deterministic_and_disjoint():
    a1, b1 = split_halves(11, 4)
    a2, b2 = split_halves(11, 4)
    np.testing.assert_array_equal(a1, a2)
    assert len(a1) == 5 and len(b1) == 6
    assert sorted(np.concatenate([a1, b1]).tolist()) == list(range(11))


def test_select_variants(toy):
    assert select(toy, "all").set == (0, 1, 2)
    assert select(toy, [2, 0]).set == (0, 2)
    assert select(toy, lambda d: [1]).set == (1,)
    split = select(toy, "gap", split_seed=3)
    assert split.split_seed == 3
    with pytest.raises(ValueError):
        select(toy, "lasso")


def test_selection_all_is_full_psi(toy):
    w = w_matrix(toy)
    e = selection_estimator(toy, "all")
    assert e.method == "full_psi"
    assert e.value == pytest.approx(naive_value(w) - 2 * psi_sum(w, toy, range(toy.p)), rel=1e-12)


def test_empty_selection_is_naive(toy):
    w = w_matrix(toy)
    e = t_selection_linear(w, toy, SelectionResult((), "external"))
    assert e.value == naive_value(w)


def test_split_uses_second_half_for_psi():
    d = make_data(2, 20, 3)
    s = select(d, "all", split_seed=1)
    e = t_selection_linear(w_matrix(d), d, s, split_seed=1)
    _, second = split_halves(20, 1)
    d2 = d.take_rows(second)
    want = naive_value(w_matrix(d)) - 2 * psi_sum(w_matrix(d2), d2, s.set)
    assert e.value == pytest.approx(want, rel=1e-12)


def test_oracle_single_value(toy):
    beta = np.array([0.3, -0.2, 0.1])
    theta = theta_pairwise(beta)
    w = w_matrix(toy)
    z = pairwise_zero_stat(toy)
    e = oracle_single(w, toy, beta, theta, z)
    c = 2 * beta @ theta / 3.0
    assert e.value == pytest.approx(naive_value(w) - c * z.value)


def test_var_selection_hat_forms():
    assert var_selection_hat(1.0, [0.2, 0.3], 100) == pytest.approx(1.0 - 8 / 100 * 0.25)
    # with Gaussian fourth moments the general form reduces to the Gaussian one
    assert var_selection_hat(1.0, [0.2, 0.3], 100, 3.0) == pytest.approx(
        var_selection_hat(1.0, [0.2, 0.3], 100))
    assert var_selection_hat(0.7, [], 100) == 0.7


def test_var_single_hat(toy):
    w = w_matrix(toy)
    z = pairwise_zero_stat(toy)
    num = oracles.c_numerator_loop(w.w, z.row_values)
    assert var_single_hat(1.0, w, toy, z) == pytest.approx(1.0 - num * num / (toy.n * 3.0), rel=1e-10)


def test_custom_and_monomial():
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    m = monomial_zero_stat(x, 2, 1, lambda k: {0: 1.0, 1: 0.0, 2: 1.0}[k])
    np.testing.assert_array_equal(m, [2.0, -9.0])
    z = custom_zero_stat(x[:, 0] ** 2 - 1, 2.0, 1)
    assert z.value == pytest.approx(4.0) and z.var_source == "custom"
    with pytest.raises(ValueError):
        monomial_zero_stat(np.ones((2, 3)), 1, 1, lambda k: 0.0)
