import math

import numpy as np
import pytest

from signal_level.datamodel import LabeledDataset
from signal_level.errors import ConfigError
from signal_level.simgen import (
    MIN_CORRELATION_REPS,
    ScenarioConfig,
    correlation_study,
    gen_linear,
    gen_nonlinear,
    kappa,
    linear_beta,
    mean_sin,
    nonlinear_beta,
    parse_estimator,
    pearson_table,
    reference_tau2,
    rmse_se_delta,
    run_scenario,
    subsample_study,
    summarize,
    synthetic_dataset,
    true_tau2,
)


def test_kappa_closed_forms():
    # closed forms from the characteristic functions
    assert kappa("exp_centered") == pytest.approx(math.sin(1.0) / 2, abs=1e-10)
    assert kappa("gaussian") == pytest.approx(math.exp(-0.5), abs=1e-10)
    assert mean_sin("exp_centered") == pytest.approx((math.cos(1.0) - math.sin(1.0)) / 2, abs=1e-10)
    assert mean_sin("gaussian") == pytest.approx(0.0, abs=1e-12)


def test_linear_beta_layout():
    cfg = ScenarioConfig(n=10, p=20, tau2=1.0, sparsity=0.95, replications=1)
    b = linear_beta(cfg)
    assert b @ b == pytest.approx(1.0)
    assert np.sum(b[:5] ** 2) == pytest.approx(0.95)
    assert np.allclose(b[5:], b[5])


def test_nonlinear_beta_layout():
    cfg = ScenarioConfig(framework="nonlinear", n=10, p=20, tau2=2.0, sparsity=0.1, replications=1)
    b = nonlinear_beta(cfg)
    assert b @ b == pytest.approx(2.0)
    assert np.sum(b[:6] ** 2) == pytest.approx(0.2)
    assert true_tau2(cfg) == pytest.approx(2.0)


def test_nonlinear_best_linear_fit():
    # the projection coefficients of the additive response equal gamma * (1 + kappa)
    cfg = ScenarioConfig(framework="nonlinear", n=10, p=4, tau2=2.0, sparsity=0.5, k_large=2,
                         replications=1, seed=4)
    g = gen_nonlinear(cfg, 0, n=200000)
    coef = g.data.x.T @ g.data.y / g.data.n
    np.testing.assert_allclose(coef, g.beta, atol=0.02)
    assert abs(g.data.y.mean()) < 0.02


def test_generation_deterministic_and_replicate_specific():
    cfg = ScenarioConfig(n=20, p=10, replications=2, seed=5)
    a, b = gen_linear(cfg, 0), gen_linear(cfg, 0)
    np.testing.assert_array_equal(a.data.x, b.data.x)
    np.testing.assert_array_equal(a.data.y, b.data.y)
    assert not np.array_equal(a.data.y, gen_linear(cfg, 1).data.y)
    with pytest.raises(ConfigError):
        gen_nonlinear(cfg, 0)


@pytest.mark.parametrize("doc,field", [
    ({"n": 2}, "n"),
    ({"framework": "cubic"}, "framework"),
    ({"sparsity": 1.5}, "sparsity"),
    ({"estimators": ["nope"]}, "estimators"),
    ({"estimators": "naive"}, "estimators"),
    ({"k_large": 300}, "k_large"),
    ({"bandwidth": 2}, "bandwidth"),
    ({"unlabeled_n": 50}, "unlabeled_n"),
    ({"bogus": 1}, "bogus"),
    ({"replications": 1.5}, "replications"),
])
def test_config_errors_name_field(doc, field):
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_dict(doc)
    assert info.value.field == field
    assert str(info.value).startswith(field)


def test_config_round_trip():
    cfg = ScenarioConfig(framework="nonlinear", estimators=("naive", "boot_single:ridge"))
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.k_large == 6


def test_parse_estimator():
    for name in ("naive", "boot_single", "boot_selection:ridge", "boot_single:cmd:echo 1"):
        parse_estimator(name)
    for bad in ("boot_single:lasso", "foo", 3):
        with pytest.raises(ValueError):
            parse_estimator(bad)


def test_summary_arithmetic():
    values = np.array([[1.0, 1.5], [3.0, 2.5], [np.nan, 2.0]])
    recs = summarize(["a", "b"], values, 2.0)
    a, b = recs
    assert a.n_ok == 2 and a.incomplete and a.mean == 2.0 and a.rmse == 1.0
    assert b.rmse == pytest.approx(math.sqrt((0.25 + 0.25 + 0) / 3))
    assert b.pct_change == pytest.approx(100 * (b.rmse - 1.0))
    assert b.mse_pct_change == pytest.approx(100 * (b.mse - 1.0))
    assert a.pct_change == 0.0


def test_rmse_se_delta():
    e = np.array([1.0, -1.0, 2.0, -2.0])
    sq = e**2
    want = np.std(sq, ddof=1) / (2 * math.sqrt(np.mean(sq)) * 2)
    assert rmse_se_delta(e) == pytest.approx(want)
    assert rmse_se_delta(np.zeros(3)) is None


def test_threads_do_not_change_values():
    cfg = ScenarioConfig(n=30, p=20, replications=6, seed=2,
                         estimators=("naive", "single", "selection", "selection_h", "oracle", "dicker"))
    a = run_scenario(cfg, threads=1)
    b = run_scenario(cfg, threads=3)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.to_dict() == b.to_dict()


def test_estimator_values_independent_of_list():
    base = dict(n=30, p=20, replications=3, seed=8)
    a = run_scenario(ScenarioConfig(estimators=("naive", "boot_single", "ridge"), bootstrap_m=5, **base))
    b = run_scenario(ScenarioConfig(estimators=("ridge", "boot_single"), bootstrap_m=5, **base))
    np.testing.assert_array_equal(a.values[:, 1:], b.values[:, ::-1])


def test_failures_are_recorded_not_fatal():
    cfg = ScenarioConfig(n=10, p=8, replications=2, estimators=("naive", "boot_single:cmd:false"),
                         bootstrap_m=2)
    s = run_scenario(cfg)
    assert s.record("boot_single:cmd:false").n_ok == 0
    assert len(s.errors) == 2 and s.incomplete


def test_estimated_moments_mode_runs():
    cfg = ScenarioConfig(framework="nonlinear", n=40, p=20, replications=2, unlabeled_n=200,
                         bandwidth=2, var_source="empirical_unlabeled", estimators=("naive", "single"))
    s = run_scenario(cfg)
    assert not s.incomplete


def test_reference_tau2_linear():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50000, 3))
    beta = np.array([1.0, 0.5, 0.0])
    d = LabeledDataset(x, x @ beta + 3.0 + rng.standard_normal(50000))
    assert reference_tau2(d) == pytest.approx(1.25, rel=0.02)


def test_subsample_study_and_correlation():
    d = synthetic_dataset(n_total=400, p=10, seed=1)
    s = subsample_study(d, 40, 3, ["naive", "single"], seed=0)
    assert s.values.shape == (3, 2) and s.config["n_sub"] == 40
    with pytest.raises(ValueError):
        subsample_study(d, 40, 3, ["oracle"])
    t = correlation_study(d, 40, reps=MIN_CORRELATION_REPS)
    assert t.matrix.shape == (1, 2)
    with pytest.raises(ValueError, match=">= 10"):
        correlation_study(d, 40, reps=4)


def test_pearson_table():
    a = np.array([[1.0], [2.0], [3.0]])
    b = np.array([[2.0, 1.0], [4.0, 1.0], [6.0, 1.0]])
    mat, flags = pearson_table(a, b, ["a"], ["u", "v"])
    assert mat[0, 0] == pytest.approx(1.0) and np.isnan(mat[0, 1])
    assert flags and "zero variance" in flags[0]
