"""Naive U-statistic estimators of the signal and noise levels.

Everything here assumes whitened covariates (mean zero, identity
covariance). With W_ij = X_ij * Y_i the naive signal estimator is

    tau2_hat = 1/(n(n-1)) * sum_{i != k} W_i . W_k

and each U-statistic is evaluated from column sums and Gram-matrix
identities instead of explicit index loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .datamodel import LabeledDataset
from .errors import NotWhitenedError


def ensure_whitened(d: LabeledDataset, model=None, assume_whitened: bool = False) -> LabeledDataset:
    """Return whitened data, transforming with ``model`` when ``d`` is raw."""
    if d.whitened or assume_whitened:
        return d
    if model is not None:
        from .whitening import whiten

        return whiten(model, d)
    raise NotWhitenedError(
        "estimators require whitened covariates; pass a CovariateModel or whiten first"
    )


def _need(n, k, what):
    if n < k:
        raise ValueError(f"{what} needs n >= {k}, got n={n}")


@dataclass(frozen=True)
class WMatrix:
    """W_ij = X_ij * Y_i with cached column sums and squared row norms."""

    w: np.ndarray
    col_sums: np.ndarray
    row_sq_norms: np.ndarray

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def p(self) -> int:
        return self.w.shape[1]

    def gram_frobenius_sq(self) -> float:
        """||W W^T||_F^2, formed on whichever side of W is smaller."""
        w = self.w
        g = w @ w.T if self.n <= self.p else w.T @ w
        return float(np.sum(g * g))


def w_matrix(d: LabeledDataset, model=None, assume_whitened: bool = False) -> WMatrix:
    d = ensure_whitened(d, model, assume_whitened)
    w = d.x * d.y[:, None]
    w.setflags(write=False)
    return WMatrix(w=w, col_sums=w.sum(axis=0), row_sq_norms=np.einsum("ij,ij->i", w, w))


@dataclass(frozen=True)
class Estimate:
    """A point estimate with an optional variance estimate and provenance.

    ``raw_variance_hat`` keeps the formula's value; ``variance_hat`` is the
    same number clamped at zero (flag ``negative_variance_clamped``).
    """

    value: float
    method: str
    variance_hat: float | None = None
    raw_variance_hat: float | None = None
    selection_set: tuple[int, ...] | None = None
    flags: tuple[str, ...] = ()
    details: dict = field(default_factory=dict)

    def with_variance(self, raw: float) -> "Estimate":
        raw = float(raw)
        flags = tuple(f for f in self.flags if f != "negative_variance_clamped")
        if raw < 0:
            flags += ("negative_variance_clamped",)
        return replace(self, variance_hat=max(raw, 0.0), raw_variance_hat=raw, flags=flags)

    def with_flag(self, flag: str) -> "Estimate":
        return self if flag in self.flags else replace(self, flags=self.flags + (flag,))

    def to_dict(self) -> dict:
        out = {
            "value": float(self.value),
            "variance_hat": self.variance_hat,
            "raw_variance_hat": self.raw_variance_hat,
            "method": self.method,
            "selection_set": None if self.selection_set is None else list(self.selection_set),
            "flags": list(self.flags),
        }
        if self.details:
            out["details"] = self.details
        return out


def beta_sq_hat_all(w: WMatrix) -> np.ndarray:
    """Unbiased estimates of every beta_j^2."""
    n = w.n
    _need(n, 2, "beta_sq_hat")
    return (w.col_sums**2 - np.einsum("ij,ij->j", w.w, w.w)) / (n * (n - 1))


def beta_sq_hat(w: WMatrix, j: int) -> float:
    n = w.n
    _need(n, 2, "beta_sq_hat")
    col = w.w[:, j]
    return float((w.col_sums[j] ** 2 - col @ col) / (n * (n - 1)))


def naive_value(w: WMatrix) -> float:
    n = w.n
    _need(n, 2, "naive estimator")
    return float((w.col_sums @ w.col_sums - w.row_sq_norms.sum()) / (n * (n - 1)))


def naive_tau2(w: WMatrix) -> Estimate:
    return Estimate(value=naive_value(w), method="naive")


def sample_var_y(y) -> float:
    y = np.asarray(y, dtype=float)
    _need(y.shape[0], 2, "sample variance")
    return float(np.var(y, ddof=1))


def sigma2_hat(d: LabeledDataset, tau2: Estimate) -> Estimate:
    """Noise level: sample variance of Y minus the signal estimate (not clamped)."""
    value = sample_var_y(d.y) - tau2.value
    est = Estimate(value=value, method="sigma2")
    return est.with_flag("negative_value") if value < 0 else est


def dicker_tau2(d: LabeledDataset, model=None) -> float:
    """(||X^T Y||^2 - p ||Y||^2) / (n(n+1))."""
    d = ensure_whitened(d, model)
    n, p = d.n, d.p
    xty = d.x.T @ d.y
    return float((xty @ xty - p * (d.y @ d.y)) / (n * (n + 1)))


def var_naive_gaussian_hat(tau2: float, sigma_y2: float, n: int, p: int) -> float:
    """Closed-form variance of the naive estimator under Gaussian covariates, with plug-ins."""
    _need(n, 2, "Gaussian variance formula")
    t2, s2 = float(tau2), float(sigma_y2)
    return (4.0 / n) * (
        (n - 2) / (n - 1) * (s2 * t2 + t2 * t2)
        + (p * s2 * s2 + 4 * s2 * t2 + 3 * t2 * t2) / (2.0 * (n - 1))
    )


def ustat_components(w: WMatrix) -> tuple[float, float, float]:
    """U-statistic estimates of (beta' A beta, ||A||_F^2, ||beta||^4), A = E[W W^T].

    With G = W W^T, row sums r and diagonal d, the ordered distinct-triple sum
    of G[i,k] G[k,l] is sum_k (r_k - d_k)^2 minus the i = l collisions
    ||G||_F^2 - sum d^2, so nothing cubic in n is formed.
    """
    n = w.n
    _need(n, 3, "ustat_components")
    dg = w.row_sq_norms
    r = w.w @ w.col_sums
    off_sq = w.gram_frobenius_sq() - float(dg @ dg)
    bab = (float(np.sum((r - dg) ** 2)) - off_sq) / (n * (n - 1) * (n - 2))
    frob = off_sq / (n * (n - 1))
    t2 = naive_value(w)
    return float(bab), float(frob), t2 * t2


def var_naive_ustat_hat(w: WMatrix) -> float:
    """Distribution-free variance estimate of the naive estimator."""
    n = w.n
    bab, frob, b4 = ustat_components(w)
    return 4.0 * (n - 2) / (n * (n - 1)) * (bab - b4) + 2.0 / (n * (n - 1)) * (frob - b4)


def estimate_naive(d: LabeledDataset, variance: str | None = "gaussian", model=None) -> Estimate:
    """Naive estimate on a dataset, optionally with a variance estimate.

    ``variance`` is ``"gaussian"``, ``"ustat"`` or ``None``.
    """
    d = ensure_whitened(d, model)
    w = w_matrix(d)
    est = naive_tau2(w)
    if variance == "gaussian":
        est = est.with_variance(var_naive_gaussian_hat(est.value, sample_var_y(d.y), d.n, d.p))
    elif variance == "ustat":
        est = est.with_variance(var_naive_ustat_hat(w))
    elif variance is not None:
        raise ValueError(f"unknown variance estimator {variance!r}")
    return est


def normal_interval(est: Estimate, z: float = 1.959963984540054) -> tuple[float, float] | None:
    """value +/- z * sqrt(variance_hat), or None without a variance estimate."""
    if est.variance_hat is None:
        return None
    half = z * math.sqrt(est.variance_hat)
    return est.value - half, est.value + half
