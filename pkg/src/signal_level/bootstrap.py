"""Bootstrap improvement of an arbitrary initial signal estimator.

The covariance between the initial estimator and the zero-estimator mean
is estimated over bootstrap resamples; the variance of that mean is known
from the covariate law, so the control-variate coefficient follows
without any closed form for the initial estimator.
"""

from __future__ import annotations

import io
import shlex
import subprocess
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .datamodel import LabeledDataset
from .errors import SignalLevelError
from .naive import Estimate, naive_value, w_matrix
from .zeroest import ANALYTIC, pairwise_zero_stat


@dataclass(frozen=True)
class InitialEstimator:
    """Named callable mapping a dataset to a real-valued estimate of the signal level."""

    name: str
    fn: Callable[[LabeledDataset], float]

    def __call__(self, d: LabeledDataset) -> float:
        return float(self.fn(d))


@dataclass(frozen=True)
class BootstrapPlan:
    m: int = 100
    seed: int = 0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise ValueError(f"bootstrap replications must be an integer >= 2, got {self.m}")


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for replicate ``index``; independent of evaluation order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def bootstrap_indices(n: int, seed: int, replicate_index: int) -> np.ndarray:
    return replicate_rng(seed, replicate_index).integers(0, n, size=n)


def bootstrap_resample(d: LabeledDataset, seed: int, replicate_index: int) -> LabeledDataset:
    return d.take_rows(bootstrap_indices(d.n, seed, replicate_index))


def empirical_improve(d: LabeledDataset, est: InitialEstimator, plan: BootstrapPlan,
                      s=None, var_source: str = ANALYTIC, u=None) -> Estimate:
    """Initial estimate minus a bootstrap-calibrated multiple of the zero-estimator mean.

    ``s`` restricts the pairwise zero-estimator to a covariate subset
    (default: all covariates). The reported details include the bootstrap
    covariance and its standard error across resamples.
    """
    z = pairwise_zero_stat(d, s, var_source, u)
    t = np.empty(plan.m)
    zb = np.empty(plan.m)
    for r in range(plan.m):
        idx = bootstrap_indices(d.n, plan.seed, r)
        t[r] = est(d.take_rows(idx))
        zb[r] = z.row_values[idx].mean()
    # shift before centering so a constant estimator gives exactly zero covariance
    t0 = t - t[0]
    dt = t0 - t0.mean()
    dz = zb - zb.mean()
    prod = dt * dz
    cov = float(prod.sum() / (plan.m - 1))
    cov_se = float(np.std(prod, ddof=1) / np.sqrt(plan.m))
    c = cov / (z.var_g / d.n)
    value = est(d) - c * z.value
    method = "bootstrap_single" if z.covers_all else "bootstrap_selection"
    return Estimate(
        value=float(value),
        method=method,
        selection_set=None if z.covers_all else z.index_set,
        details={
            "initial": est.name,
            "c": float(c),
            "bootstrap_cov": cov,
            "bootstrap_cov_se": cov_se,
            "m": plan.m,
            "seed": plan.seed,
            "zero_stat": z.to_dict(),
        },
    )


# ---------------------------------------------------------------- initial estimators


def default_lambda_grid(x: np.ndarray, size: int = 20) -> np.ndarray:
    n, p = x.shape
    scale = float(np.sum(x * x)) / (n * p)
    return np.logspace(-3, 3, size) * scale


def _ridge_path(x, y, lams):
    """Ridge coefficients for every lambda as columns of a p x L matrix."""
    u, sv, vt = np.linalg.svd(x, full_matrices=False)
    uty = u.T @ y
    shrink = sv[:, None] / (sv[:, None] ** 2 + lams[None, :])
    return vt.T @ (shrink * uty[:, None])


def ridge_tau2(d: LabeledDataset, lambda_grid=None, folds: int = 10, seed: int = 0) -> float:
    """Squared norm of ridge coefficients with the penalty chosen by k-fold CV."""
    n = d.n
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds}")
    if folds > n:
        raise ValueError(f"folds ({folds}) exceeds the number of rows ({n})")
    if not np.any(d.x):
        return 0.0
    lams = default_lambda_grid(d.x) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    if lams.ndim != 1 or lams.size == 0 or not np.all(lams > 0):
        raise ValueError("lambda grid must be a non-empty vector of positive values")
    if lams.size > 1:
        perm = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed))).permutation(n)
        sse = np.zeros(lams.size)
        for k in range(folds):
            test = np.zeros(n, dtype=bool)
            test[perm[k::folds]] = True
            coefs = _ridge_path(d.x[~test], d.y[~test], lams)
            resid = d.y[test][:, None] - d.x[test] @ coefs
            sse += np.sum(resid**2, axis=0)
        best = lams[int(np.argmin(sse))]
    else:
        best = lams[0]
    beta = _ridge_path(d.x, d.y, np.array([best]))[:, 0]
    return float(beta @ beta)


def dataset_to_csv_text(d: LabeledDataset) -> str:
    buf = io.StringIO()
    buf.write(",".join([*d.names(), "y"]) + "\n")
    for xi, yi in zip(d.x, d.y):
        buf.write(",".join(repr(float(v)) for v in xi) + "," + repr(float(yi)) + "\n")
    return buf.getvalue()


def command_initial(command: str, timeout: float | None = 600.0) -> InitialEstimator:
    """Initial estimator backed by an external program.

    The program receives the dataset as CSV (header, response last) on
    standard input and must print a single real number.
    """
    argv = shlex.split(command)
    if not argv:
        raise ValueError("empty external estimator command")

    def run(d: LabeledDataset) -> float:
        proc = subprocess.run(argv, input=dataset_to_csv_text(d), capture_output=True,
                              text=True, timeout=timeout)
        if proc.returncode != 0:
            raise SignalLevelError(
                f"external estimator {command!r} exited with {proc.returncode}: {proc.stderr.strip()}"
            )
        try:
            return float(proc.stdout.strip())
        except ValueError:
            raise SignalLevelError(
                f"external estimator {command!r} printed {proc.stdout.strip()!r}, expected one number"
            ) from None

    return InitialEstimator(f"cmd:{command}", run)


def naive_initial() -> InitialEstimator:
    return InitialEstimator("naive", lambda d: naive_value(w_matrix(d)))


def ridge_initial(lambda_grid=None, folds: int = 10, seed: int = 0) -> InitialEstimator:
    return InitialEstimator("ridge", lambda d: ridge_tau2(d, lambda_grid, folds, seed))


def constant_initial(value: float) -> InitialEstimator:
    return InitialEstimator(f"constant:{value!r}", lambda d: value)


def resolve_initial(spec: str, seed: int = 0) -> InitialEstimator:
    """Parse ``naive``, ``ridge`` or ``cmd:<program and args>``."""
    if spec == "naive":
        return naive_initial()
    if spec == "ridge":
        return ridge_initial(seed=seed)
    if spec.startswith("cmd:"):
        return command_initial(spec[4:])
    raise ValueError(f"unknown initial estimator {spec!r}")
