"""Synthetic generators, the Monte Carlo scenario runner and subsampling studies."""

from __future__ import annotations

import functools
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import integrate
from threadpoolctl import threadpool_limits

from .bootstrap import BootstrapPlan, empirical_improve, resolve_initial, ridge_tau2
from .datamodel import LabeledDataset, UnlabeledDataset
from .errors import ConfigError, DegenerateCovarianceError, DegenerateZeroEstimatorError
from .naive import WMatrix, beta_sq_hat_all, dicker_tau2, naive_value, w_matrix
from .whitening import estimate_moments, whiten
from .zeroest import (
    ANALYTIC,
    EMPIRICAL,
    SelectionResult,
    c_hat,
    gap_selection,
    oracle_ooe,
    oracle_single,
    pairwise_zero_stat,
    select,
    t_selection_linear,
    theta_pairwise,
)

FRAMEWORKS = ("linear", "nonlinear")
COVARIATE_LAWS = ("gaussian", "exp_centered")
DEFAULT_K = {"linear": 5, "nonlinear": 6}

# ---------------------------------------------------------------- covariate laws


def draw_covariates(rng: np.random.Generator, n: int, p: int, law: str) -> np.ndarray:
    if law == "gaussian":
        return rng.standard_normal((n, p))
    if law == "exp_centered":
        return rng.standard_exponential((n, p)) - 1.0
    raise ValueError(f"unknown covariate law {law!r}")


def _law_expectation(law: str, f: Callable[[float], float]) -> float:
    if law == "gaussian":
        dens = lambda x: f(x) * math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
        val, _ = integrate.quad(dens, -math.inf, math.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
    elif law == "exp_centered":
        val, _ = integrate.quad(lambda t: f(t - 1.0) * math.exp(-t), 0.0, math.inf,
                                epsabs=1e-13, epsrel=1e-12, limit=200)
    else:
        raise ValueError(f"unknown covariate law {law!r}")
    return val


@functools.lru_cache(maxsize=None)
def kappa(law: str) -> float:
    """E[X sin X] under the covariate law, by adaptive quadrature."""
    return _law_expectation(law, lambda x: x * math.sin(x))


@functools.lru_cache(maxsize=None)
def mean_sin(law: str) -> float:
    """E[sin X]; subtracted so the nonlinear response has mean zero."""
    return _law_expectation(law, math.sin)


def fourth_moment(law: str) -> float:
    return {"gaussian": 3.0, "exp_centered": 9.0}[law]


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation cell.

    ``sparsity`` is the share of the signal carried by the first ``k_large``
    covariates (the tau_B^2 fraction for the linear model, eta for the
    nonlinear one).
    """

    framework: str = "linear"
    n: int = 300
    p: int = 300
    replications: int = 100
    tau2: float = 1.0
    sparsity: float = 0.05
    k_large: int | None = None
    covariate_dist: str = "exp_centered"
    estimators: tuple[str, ...] = ("naive", "single", "selection")
    seed: int = 0
    unlabeled_n: int | None = None
    bandwidth: int | None = None
    var_source: str = ANALYTIC
    split_seed: int | None = None
    bootstrap_m: int = 100

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.k_large is None and self.framework in DEFAULT_K:
            object.__setattr__(self, "k_large", DEFAULT_K[self.framework])
        self.validate()

    def validate(self) -> None:
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(msg, field=name)

        def is_int(v):
            return isinstance(v, (int, np.integer)) and not isinstance(v, bool)

        need(self.framework in FRAMEWORKS, "framework", f"must be one of {FRAMEWORKS}")
        need(self.covariate_dist in COVARIATE_LAWS, "covariate_dist", f"must be one of {COVARIATE_LAWS}")
        for name in ("n", "p", "replications", "k_large", "seed", "bootstrap_m"):
            need(is_int(getattr(self, name)), name, "must be an integer")
        need(self.n >= 3, "n", "must be at least 3")
        need(self.p >= 2, "p", "must be at least 2")
        need(self.replications >= 1, "replications", "must be at least 1")
        need(self.bootstrap_m >= 2, "bootstrap_m", "must be at least 2")
        need(isinstance(self.tau2, (int, float)) and self.tau2 >= 0, "tau2", "must be a non-negative number")
        need(isinstance(self.sparsity, (int, float)) and 0 <= self.sparsity <= 1,
             "sparsity", "must lie in [0, 1]")
        need(1 <= self.k_large < self.p, "k_large", "must satisfy 1 <= k_large < p")
        if self.unlabeled_n is not None:
            need(is_int(self.unlabeled_n) and self.unlabeled_n >= 2, "unlabeled_n", "must be an integer >= 2")
            if self.bandwidth is None:
                need(self.unlabeled_n >= self.p + 1, "unlabeled_n",
                     "must be at least p + 1 without a bandwidth")
        if self.bandwidth is not None:
            need(is_int(self.bandwidth) and self.bandwidth >= 0, "bandwidth", "must be a non-negative integer")
            need(self.unlabeled_n is not None, "bandwidth", "requires unlabeled_n")
        need(self.var_source in (ANALYTIC, EMPIRICAL), "var_source", f"must be {ANALYTIC} or {EMPIRICAL}")
        if self.var_source == EMPIRICAL:
            need(self.unlabeled_n is not None, "var_source", "empirical_unlabeled requires unlabeled_n")
        if self.split_seed is not None:
            need(is_int(self.split_seed), "split_seed", "must be an integer")
        need(len(self.estimators) >= 1, "estimators", "must list at least one estimator")
        for spec in self.estimators:
            try:
                parse_estimator(spec)
            except ValueError as exc:
                raise ConfigError(str(exc), field="estimators") from None

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in doc:
            if key not in known:
                raise ConfigError("unknown field", field=key)
        doc = dict(doc)
        if "estimators" in doc:
            if isinstance(doc["estimators"], str) or not isinstance(doc["estimators"], (list, tuple)):
                raise ConfigError("must be a list of estimator names", field="estimators")
            doc["estimators"] = tuple(doc["estimators"])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimators"] = list(self.estimators)
        return d


# ---------------------------------------------------------------- generators


class Generated(NamedTuple):
    data: LabeledDataset
    beta: np.ndarray
    theta: np.ndarray


def replicate_streams(seed: int, replicate_index: int):
    """Independent generators for (labeled data, unlabeled data, estimator seeds)."""
    root = np.random.SeedSequence(seed, spawn_key=(replicate_index,))
    kids = root.spawn(3)
    return tuple(np.random.Generator(np.random.Philox(k)) for k in kids)


def linear_beta(cfg: ScenarioConfig) -> np.ndarray:
    k, p = cfg.k_large, cfg.p
    big = cfg.sparsity * cfg.tau2
    b2 = np.empty(p)
    b2[:k] = big / k
    b2[k:] = (cfg.tau2 - big) / (p - k)
    return np.sqrt(b2)


def gen_linear(cfg: ScenarioConfig, replicate_index: int) -> Generated:
    """Y = X beta + eps with beta_j^2 = sparsity*tau2/K for the first K covariates."""
    if cfg.framework != "linear":
        raise ConfigError("gen_linear needs a linear configuration", field="framework")
    rng = replicate_streams(cfg.seed, replicate_index)[0]
    beta = linear_beta(cfg)
    x = draw_covariates(rng, cfg.n, cfg.p, cfg.covariate_dist)
    y = x @ beta + rng.standard_normal(cfg.n)
    return Generated(LabeledDataset(x, y), beta, theta_pairwise(beta))


def nonlinear_gammas(cfg: ScenarioConfig) -> np.ndarray:
    k, p = cfg.k_large, cfg.p
    scale = (1.0 + kappa(cfg.covariate_dist)) ** 2
    g = np.empty(p)
    g[:k] = math.sqrt(cfg.sparsity * cfg.tau2 / (k * scale))
    g[k:] = math.sqrt(cfg.tau2 * (1.0 - cfg.sparsity) / ((p - k) * scale))
    return g


def nonlinear_beta(cfg: ScenarioConfig) -> np.ndarray:
    return nonlinear_gammas(cfg) * (1.0 + kappa(cfg.covariate_dist))


def gen_nonlinear(cfg: ScenarioConfig, replicate_index: int, n: int | None = None) -> Generated:
    """Additive response sum_j gamma_j (X_j + sin X_j) + xi, centred to mean zero."""
    if cfg.framework != "nonlinear":
        raise ConfigError("gen_nonlinear needs a nonlinear configuration", field="framework")
    rng = replicate_streams(cfg.seed, replicate_index)[0]
    n = cfg.n if n is None else n
    gam = nonlinear_gammas(cfg)
    x = draw_covariates(rng, n, cfg.p, cfg.covariate_dist)
    f = x + np.sin(x) - mean_sin(cfg.covariate_dist)
    y = f @ gam + rng.standard_normal(n)
    beta = gam * (1.0 + kappa(cfg.covariate_dist))
    return Generated(LabeledDataset(x, y), beta, theta_pairwise(beta))


def generate(cfg: ScenarioConfig, replicate_index: int) -> Generated:
    return (gen_linear if cfg.framework == "linear" else gen_nonlinear)(cfg, replicate_index)


def synthetic_dataset(n_total: int = 20000, p: int = 200, tau2: float = 2.0, eta: float = 0.5,
                      covariate_dist: str = "exp_centered", seed: int = 0) -> LabeledDataset:
    """A large nonlinear-model sample used as a stand-in for real data in subsampling studies."""
    cfg = ScenarioConfig(framework="nonlinear", n=3, p=p, replications=1, tau2=tau2,
                         sparsity=eta, covariate_dist=covariate_dist, seed=seed)
    return gen_nonlinear(cfg, 0, n=n_total).data


# ---------------------------------------------------------------- estimators


class _Context:
    """Per-replicate cache so estimators share W, beta_sq_hat and gap selection."""

    def __init__(self, d: LabeledDataset, seed: int, *, beta=None, theta=None,
                 var_source=ANALYTIC, unlabeled=None, split_seed=None, bootstrap_m=100):
        self.d = d
        self.seed = seed
        self.beta = beta
        self.theta = theta
        self.var_source = var_source
        self.unlabeled = unlabeled
        self.split_seed = split_seed
        self.bootstrap_m = bootstrap_m
        self._w: WMatrix | None = None
        self._gap: SelectionResult | None = None

    @property
    def w(self) -> WMatrix:
        if self._w is None:
            self._w = w_matrix(self.d)
        return self._w

    @property
    def gap(self) -> SelectionResult:
        if self._gap is None:
            self._gap = gap_selection(beta_sq_hat_all(self.w))
        return self._gap

    def zero(self, s=None):
        return pairwise_zero_stat(self.d, s, self.var_source, self.unlabeled)

    def need_truth(self, name):
        if self.beta is None:
            raise ValueError(f"{name} needs the true coefficients, available only in simulations")


def _single(ctx: _Context) -> float:
    z = ctx.zero()
    return naive_value(ctx.w) - c_hat(ctx.w, ctx.d, z) * z.value


def _selection_h(ctx: _Context) -> float:
    s = ctx.gap.set
    if len(s) < 2:
        return naive_value(ctx.w)
    z = ctx.zero(s)
    return naive_value(ctx.w) - c_hat(ctx.w, ctx.d, z) * z.value


def _selection(ctx: _Context) -> float:
    if ctx.split_seed is None:
        return t_selection_linear(ctx.w, ctx.d, ctx.gap).value
    s = select(ctx.d, "gap", ctx.split_seed)
    return t_selection_linear(ctx.w, ctx.d, s, ctx.split_seed).value


def _full_psi(ctx: _Context) -> float:
    s = SelectionResult(tuple(range(ctx.d.p)), "all")
    return t_selection_linear(ctx.w, ctx.d, s).value


def _oracle(ctx: _Context) -> float:
    ctx.need_truth("oracle")
    return oracle_ooe(ctx.w, ctx.d, ctx.beta).value


def _oracle_single(ctx: _Context) -> float:
    ctx.need_truth("oracle_single")
    return oracle_single(ctx.w, ctx.d, ctx.beta, ctx.theta, ctx.zero()).value


def _bootstrap(selection: bool, initial: str):
    def run(ctx: _Context) -> float:
        est = resolve_initial(initial, seed=ctx.seed)
        s = None
        if selection:
            s = ctx.gap.set
            if len(s) < 2:
                return est(ctx.d)
        plan = BootstrapPlan(m=ctx.bootstrap_m, seed=ctx.seed)
        return empirical_improve(ctx.d, est, plan, s, ctx.var_source, ctx.unlabeled).value

    return run


_SIMPLE = {
    "naive": lambda ctx: naive_value(ctx.w),
    "dicker": lambda ctx: dicker_tau2(ctx.d),
    "single": _single,
    "selection": _selection,
    "selection_h": _selection_h,
    "full_psi": _full_psi,
    "oracle": _oracle,
    "oracle_single": _oracle_single,
    "ridge": lambda ctx: ridge_tau2(ctx.d, seed=ctx.seed),
}
ORACLES = ("oracle", "oracle_single")
ESTIMATOR_NAMES = tuple(_SIMPLE) + ("boot_single", "boot_selection")


def parse_estimator(spec: str) -> Callable[[_Context], float]:
    """Resolve an estimator name; bootstrap variants take an optional ``:initial`` suffix."""
    if not isinstance(spec, str):
        raise ValueError(f"estimator spec must be a string, got {spec!r}")
    if spec in _SIMPLE:
        return _SIMPLE[spec]
    head, _, initial = spec.partition(":")
    if head in ("boot_single", "boot_selection"):
        initial = initial or "naive"
        if initial not in ("naive", "ridge") and not initial.startswith("cmd:"):
            raise ValueError(f"unknown initial estimator {initial!r} in {spec!r}")
        return _bootstrap(head == "boot_selection", initial)
    raise ValueError(f"unknown estimator {spec!r}; choose from {', '.join(ESTIMATOR_NAMES)}")


def estimator_seed(est_rng_state: int, name: str) -> int:
    """Seed for one estimator in one replicate, independent of list order."""
    ss = np.random.SeedSequence(est_rng_state, spawn_key=(zlib.crc32(name.encode()),))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _evaluate(specs: Sequence[str], ctx: _Context, base_seed: int):
    values = np.full(len(specs), np.nan)
    errors = {}
    for k, spec in enumerate(specs):
        ctx.seed = estimator_seed(base_seed, spec)
        try:
            values[k] = parse_estimator(spec)(ctx)
        except Exception as exc:  # recorded per replicate, never fatal
            errors[spec] = f"{type(exc).__name__}: {exc}"
    return values, errors


# ---------------------------------------------------------------- summaries


def rmse_se_delta(errors) -> float | None:
    """Delta-method standard error of a Monte Carlo RMSE: sd(e^2) / (2 RMSE sqrt(R))."""
    e = np.asarray(errors, dtype=float)
    if e.size < 2:
        raise ValueError("need at least 2 replicates")
    rmse = math.sqrt(float(np.mean(e * e)))
    if rmse == 0:
        return None
    return float(np.std(e * e, ddof=1) / (2.0 * rmse * math.sqrt(e.size)))


@dataclass(frozen=True)
class EstimatorSummary:
    name: str
    n_ok: int
    mean: float | None
    bias: float | None
    se: float | None
    rmse: float | None
    rmse_se: float | None
    pct_change: float | None
    mse: float | None
    mse_pct_change: float | None
    incomplete: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _pct(a, b):
    if a is None or b is None or b == 0:
        return None
    return 100.0 * (a - b) / b


def summarize(names: Sequence[str], values: np.ndarray, truth: float) -> list[EstimatorSummary]:
    """Column-wise Monte Carlo summaries; the first column is the %change baseline."""
    out = []
    base_rmse = base_mse = None
    for k, name in enumerate(names):
        col = values[:, k]
        ok = col[np.isfinite(col)]
        r = ok.size
        if r == 0:
            rec = EstimatorSummary(name, 0, None, None, None, None, None, None, None, None, True)
        else:
            err = ok - truth
            mse = float(np.mean(err * err))
            rmse = math.sqrt(mse)
            mean = float(np.mean(ok))
            rec = EstimatorSummary(
                name=name,
                n_ok=r,
                mean=mean,
                bias=mean - truth,
                se=float(np.std(ok, ddof=1)) if r > 1 else None,
                rmse=rmse,
                rmse_se=rmse_se_delta(err) if r > 1 else None,
                pct_change=None,
                mse=mse,
                mse_pct_change=None,
                incomplete=r < col.size,
            )
        if k == 0:
            base_rmse, base_mse = rec.rmse, rec.mse
        rec = replace(rec, pct_change=_pct(rec.rmse, base_rmse), mse_pct_change=_pct(rec.mse, base_mse))
        out.append(rec)
    return out


@dataclass(frozen=True)
class ScenarioSummary:
    """Per-estimator summaries plus the replicate values they came from."""

    truth: float
    records: tuple[EstimatorSummary, ...]
    values: np.ndarray
    errors: tuple[tuple[int, str, str], ...] = ()
    config: dict = field(default_factory=dict)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.records)

    @property
    def incomplete(self) -> bool:
        return any(r.incomplete for r in self.records)

    def record(self, name: str) -> EstimatorSummary:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self, include_values: bool = False) -> dict:
        out = {
            "truth": self.truth,
            "replications": int(self.values.shape[0]),
            "incomplete": self.incomplete,
            "estimators": [r.to_dict() for r in self.records],
            "errors": [{"replicate": i, "estimator": e, "message": m} for i, e, m in self.errors],
        }
        if include_values:
            out["values"] = [[None if not np.isfinite(v) else float(v) for v in row] for row in self.values]
        return out

    TABLE_COLUMNS = ("Estimator", "Mean", "SE", "RMSE", "sigma_RMSE", "%Change",
                     "Bias", "MSE", "MSE%Change", "n_ok")

    def table_rows(self) -> list[list]:
        return [
            [r.name, r.mean, r.se, r.rmse, r.rmse_se, r.pct_change, r.bias, r.mse, r.mse_pct_change, r.n_ok]
            for r in self.records
        ]


def _map_replicates(fn, count: int, threads: int):
    with threadpool_limits(limits=1):
        if threads <= 1:
            return [fn(r) for r in range(count)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(count)))


def _collect(results, names):
    values = np.vstack([v for v, _ in results]) if results else np.empty((0, len(names)))
    errors = tuple((i, name, msg) for i, (_, errs) in enumerate(results) for name, msg in errs.items())
    return values, errors


def run_replicate(cfg: ScenarioConfig, r: int):
    """Values of every configured estimator on replicate ``r`` and any failures."""
    gen = generate(cfg, r)
    _, unl_rng, est_rng = replicate_streams(cfg.seed, r)
    unlabeled = None
    if cfg.unlabeled_n is not None:
        u = UnlabeledDataset(draw_covariates(unl_rng, cfg.unlabeled_n, cfg.p, cfg.covariate_dist))
        model = estimate_moments(u, cfg.bandwidth)
        d = whiten(model, gen.data)
        if cfg.var_source == EMPIRICAL:
            unlabeled = whiten(model, u)
    else:
        # known law: mean 0, identity covariance, so whitening is the identity map
        d = replace(gen.data, whitened=True)
    base_seed = int(est_rng.integers(0, 2**63 - 1))
    ctx = _Context(d, base_seed, beta=gen.beta, theta=gen.theta, var_source=cfg.var_source,
                   unlabeled=unlabeled, split_seed=cfg.split_seed, bootstrap_m=cfg.bootstrap_m)
    return _evaluate(cfg.estimators, ctx, base_seed)


def true_tau2(cfg: ScenarioConfig) -> float:
    beta = linear_beta(cfg) if cfg.framework == "linear" else nonlinear_beta(cfg)
    return float(beta @ beta)


def run_scenario(cfg: ScenarioConfig, threads: int = 1) -> ScenarioSummary:
    """Run every replicate of ``cfg`` and summarize against the true signal level."""
    results = _map_replicates(lambda r: run_replicate(cfg, r), cfg.replications, threads)
    values, errors = _collect(results, cfg.estimators)
    truth = true_tau2(cfg)
    return ScenarioSummary(truth, tuple(summarize(cfg.estimators, values, truth)), values,
                           errors, cfg.to_dict())


# ---------------------------------------------------------------- subsampling studies


def reference_tau2(d: LabeledDataset) -> float:
    """beta' Sigma beta with full-data least squares slopes and plug-in covariance."""
    n, p = d.n, d.p
    design = np.hstack([np.ones((n, 1)), d.x])
    coef, _, rank, _ = np.linalg.lstsq(design, d.y, rcond=None)
    if rank < p + 1:
        raise ValueError(
            f"full-data least squares is rank deficient (rank {rank} < {p + 1}); "
            "prune collinear columns first"
        )
    b = coef[1:]
    xc = d.x - d.x.mean(axis=0)
    xb = xc @ b
    return float(xb @ xb / n)


def _check_subsample(d: LabeledDataset, n_sub: int, bandwidth):
    if not 3 <= n_sub <= d.n:
        raise ValueError(f"n_sub must lie in [3, {d.n}], got {n_sub}")
    rest = d.n - n_sub
    if rest < 2:
        raise ValueError(f"only {rest} unlabeled rows remain; moments not estimable")
    if bandwidth is None and rest < d.p + 1:
        raise DegenerateCovarianceError(
            f"{rest} unlabeled rows cannot support a full {d.p}x{d.p} covariance; give a bandwidth"
        )


def _subsample(d: LabeledDataset, n_sub: int, seed: int, r: int, bandwidth, center: bool):
    lab_rng, _, est_rng = replicate_streams(seed, r)
    perm = lab_rng.permutation(d.n)
    lab, unl = np.sort(perm[:n_sub]), np.sort(perm[n_sub:])
    u = UnlabeledDataset(d.x[unl])
    model = estimate_moments(u, bandwidth)
    dl = whiten(model, d.take_rows(lab))
    if center:
        dl = dl.with_response(dl.y - dl.y.mean())
    return dl, model, u, int(est_rng.integers(0, 2**63 - 1))


def subsample_study(d: LabeledDataset, n_sub: int, reps: int, estimators: Sequence[str], seed: int = 0,
                    bandwidth: int | None = None, var_source: str = ANALYTIC,
                    center_response: bool = True, bootstrap_m: int = 100,
                    threads: int = 1) -> ScenarioSummary:
    """Treat random subsamples as labeled data and the remaining rows as unlabeled."""
    estimators = tuple(estimators)
    for spec in estimators:
        parse_estimator(spec)
        if spec in ORACLES:
            raise ValueError(f"{spec} needs true coefficients and cannot run on a fixed dataset")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    _check_subsample(d, n_sub, bandwidth)
    truth = reference_tau2(d)

    def one(r):
        dl, model, u, base_seed = _subsample(d, n_sub, seed, r, bandwidth, center_response)
        unl = whiten(model, u) if var_source == EMPIRICAL else None
        ctx = _Context(dl, base_seed, var_source=var_source, unlabeled=unl, bootstrap_m=bootstrap_m)
        return _evaluate(estimators, ctx, base_seed)

    results = _map_replicates(one, reps, threads)
    values, errors = _collect(results, estimators)
    config = {"n_sub": n_sub, "reps": reps, "estimators": list(estimators), "seed": seed,
              "bandwidth": bandwidth, "var_source": var_source, "center_response": center_response,
              "bootstrap_m": bootstrap_m, "n_total": d.n, "p": d.p}
    return ScenarioSummary(truth, tuple(summarize(estimators, values, truth)), values, errors, config)


@dataclass(frozen=True)
class CorrelationTable:
    initial: tuple[str, ...]
    zero: tuple[str, ...]
    matrix: np.ndarray
    flags: tuple[str, ...] = ()
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "initial": list(self.initial),
            "zero": list(self.zero),
            "matrix": [[None if not np.isfinite(v) else float(v) for v in row] for row in self.matrix],
            "flags": list(self.flags),
        }


def pearson_table(a: np.ndarray, b: np.ndarray, a_names, b_names):
    """Correlation of every column of ``a`` with every column of ``b``; NaN rows are dropped pairwise."""
    mat = np.full((a.shape[1], b.shape[1]), np.nan)
    flags = []
    for i in range(a.shape[1]):
        for j in range(b.shape[1]):
            ok = np.isfinite(a[:, i]) & np.isfinite(b[:, j])
            x, y = a[ok, i], b[ok, j]
            if x.size < 2:
                flags.append(f"{a_names[i]}/{b_names[j]}: fewer than 2 usable replicates")
                continue
            dx, dy = x - x.mean(), y - y.mean()
            den = math.sqrt(float(dx @ dx) * float(dy @ dy))
            if den == 0:
                flags.append(f"{a_names[i]}/{b_names[j]}: zero variance")
                continue
            mat[i, j] = float(dx @ dy) / den
    return mat, tuple(flags)


ZERO_STATS = ("single", "selection")
MIN_CORRELATION_REPS = 10


def correlation_study(d: LabeledDataset, n_sub: int, reps: int = 300,
                      initial_estimators: Sequence[str] = ("naive",),
                      zero_estimators: Sequence[str] = ZERO_STATS, seed: int = 0,
                      bandwidth: int | None = None, center_response: bool = True,
                      threads: int = 1) -> CorrelationTable:
    """Correlation across subsamples between initial estimates and zero-estimator means.

    ``single`` is the pairwise mean over all covariates; ``selection`` uses
    the gap-selected covariates of each subsample.
    """
    if reps < MIN_CORRELATION_REPS:
        raise ValueError(f"correlation study needs reps >= {MIN_CORRELATION_REPS}, got {reps}")
    initial = tuple(initial_estimators)
    zero = tuple(zero_estimators)
    for z in zero:
        if z not in ZERO_STATS:
            raise ValueError(f"unknown zero-estimator {z!r}; choose from {ZERO_STATS}")
    _check_subsample(d, n_sub, bandwidth)

    def one(r):
        dl, _, _, base_seed = _subsample(d, n_sub, seed, r, bandwidth, center_response)
        a = np.array([resolve_initial(s, seed=estimator_seed(base_seed, s))(dl) for s in initial])
        b = np.full(len(zero), np.nan)
        for k, name in enumerate(zero):
            if name == "single":
                b[k] = pairwise_zero_stat(dl).value
            else:
                s = gap_selection(beta_sq_hat_all(w_matrix(dl))).set
                try:
                    b[k] = pairwise_zero_stat(dl, s).value
                except DegenerateZeroEstimatorError:
                    pass
        return a, b

    rows = _map_replicates(one, reps, threads)
    a = np.vstack([r[0] for r in rows])
    b = np.vstack([r[1] for r in rows])
    mat, flags = pearson_table(a, b, initial, zero)
    config = {"n_sub": n_sub, "reps": reps, "initial": list(initial), "zero": list(zero), "seed": seed,
              "bandwidth": bandwidth, "center_response": center_response}
    return CorrelationTable(initial, zero, mat, flags, config)
