"""Zero-estimator corrections to the naive signal estimator.

A zero-estimator is a function of the covariates alone whose mean is
known to be zero, so subtracting a multiple of it keeps the estimator
unbiased while removing the part of its variance it explains. The
pairwise family used here is

    g(x) = sum_{j<k in S} x_j x_k,    Z = mean_i g(X_i).

Indices are 0-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .datamodel import LabeledDataset, UnlabeledDataset
from .errors import DegenerateZeroEstimatorError, NotWhitenedError
from .naive import Estimate, WMatrix, beta_sq_hat_all, naive_value, w_matrix

ANALYTIC = "analytic_independent"
EMPIRICAL = "empirical_unlabeled"

SelectionProcedure = Callable[[LabeledDataset], Sequence[int]]


@dataclass(frozen=True)
class ZeroStat:
    """Z = mean of g over the labeled rows, with Var[g(X)] for a single row."""

    value: float
    index_set: tuple[int, ...]
    var_g: float
    var_source: str
    p: int
    row_values: np.ndarray

    def __post_init__(self):
        if not self.var_g > 0:
            raise DegenerateZeroEstimatorError(f"Var[g] must be positive, got {self.var_g}")

    @property
    def covers_all(self) -> bool:
        return len(self.index_set) == self.p

    def to_dict(self) -> dict:
        return {
            "value": float(self.value),
            "index_set": list(self.index_set),
            "var_g": float(self.var_g),
            "var_source": self.var_source,
        }


@dataclass(frozen=True)
class SelectionResult:
    set: tuple[int, ...]
    procedure: str
    split_seed: int | None = None

    def to_dict(self) -> dict:
        return {"set": list(self.set), "procedure": self.procedure, "split_seed": self.split_seed}


def _index_set(s, p) -> tuple[int, ...]:
    if s is None:
        return tuple(range(p))
    out = tuple(sorted(int(j) for j in s))
    if len(set(out)) != len(out):
        raise ValueError("index set contains duplicates")
    if out and not (0 <= out[0] and out[-1] < p):
        raise IndexError(f"index set {out} out of range for p={p}")
    return out


def _require_whitened(d):
    if not d.whitened:
        raise NotWhitenedError("zero-estimators assume whitened covariates")


def pairwise_g(x: np.ndarray, s: Sequence[int]) -> np.ndarray:
    """Per-row sum_{j<k in s} x_j x_k via ((sum x)^2 - sum x^2) / 2."""
    xs = x[:, list(s)]
    tot = xs.sum(axis=1)
    return 0.5 * (tot * tot - np.einsum("ij,ij->i", xs, xs))


def var_pairwise_zero(s, p: int, source: str = ANALYTIC, u: UnlabeledDataset | None = None) -> float:
    """Var[g(X)] for one row: |s|(|s|-1)/2 analytically, or a sample variance over ``u``."""
    s = _index_set(s, p)
    if len(s) < 2:
        raise DegenerateZeroEstimatorError(f"pairwise zero-estimator needs |s| >= 2, got {len(s)}")
    if source == ANALYTIC:
        return len(s) * (len(s) - 1) / 2.0
    if source == EMPIRICAL:
        if u is None:
            raise ValueError("empirical Var[g] needs an unlabeled sample")
        _require_whitened(u)
        return float(np.var(pairwise_g(u.x, s), ddof=1))
    raise ValueError(f"unknown var_source {source!r}")


def pairwise_zero_stat(d: LabeledDataset, s=None, var_source: str = ANALYTIC,
                       u: UnlabeledDataset | None = None) -> ZeroStat:
    _require_whitened(d)
    s = _index_set(s, d.p)
    var_g = var_pairwise_zero(s, d.p, var_source, u)
    g = pairwise_g(d.x, s)
    g.setflags(write=False)
    return ZeroStat(float(g.mean()), s, var_g, var_source, d.p, g)


def custom_zero_stat(row_values, var_g: float, p: int, index_set=None) -> ZeroStat:
    """Wrap arbitrary per-row zero-mean values, e.g. ``x**2 - 1`` for p = 1."""
    g = np.array(row_values, dtype=float)
    g.setflags(write=False)
    return ZeroStat(float(g.mean()), _index_set(index_set, p), float(var_g), "custom", p, g)


def monomial_zero_stat(x: np.ndarray, k1: int, k2: int, moment: Callable[[int], float]) -> np.ndarray:
    """Per-row x1^k1 x2^k2 - E[X^k1] E[X^k2] for two independent covariates (p <= 2).

    ``moment(k)`` returns the k-th raw moment of a single covariate.
    """
    if x.shape[1] > 2:
        raise ValueError("monomial zero-estimators are only provided for p <= 2")
    x2 = x[:, 1] if x.shape[1] == 2 else np.ones(x.shape[0])
    if x.shape[1] == 1 and k2:
        raise ValueError("k2 must be 0 when p = 1")
    return x[:, 0] ** k1 * x2**k2 - moment(k1) * moment(k2)


def c_hat_numerator(w: WMatrix, g: np.ndarray) -> float:
    """2/(n(n-1)) * sum_{i != k} W_i . W_k g_k."""
    n = w.n
    if n < 2:
        raise ValueError(f"coefficient estimate needs n >= 2, got n={n}")
    if g.shape[0] != n:
        raise ValueError("zero-estimator rows do not match the labeled sample")
    s = w.col_sums @ (w.w.T @ g) - w.row_sq_norms @ g
    return float(2.0 * s / (n * (n - 1)))


def c_hat(w: WMatrix, d: LabeledDataset, z: ZeroStat) -> float:
    """U-statistic estimate of the variance-minimizing coefficient for ``z``."""
    return c_hat_numerator(w, z.row_values) / z.var_g


def improve_single(tau2: Estimate, c: float, z: ZeroStat) -> Estimate:
    method = "single" if z.covers_all else "selection_h"
    return Estimate(
        value=float(tau2.value - c * z.value),
        method=method,
        selection_set=None if z.covers_all else z.index_set,
        details={"c": float(c), "zero_stat": z.to_dict()},
    )


def gap_selection(beta_sq) -> SelectionResult:
    """Select every coefficient at or above the upper edge of the largest gap.

    Gaps are between consecutive ascending order statistics; ties in the
    largest gap resolve to the lowest position, which selects more.
    """
    b = np.asarray(beta_sq, dtype=float)
    if b.ndim != 1 or b.shape[0] < 2:
        raise ValueError("gap selection needs at least two coefficients")
    sb = np.sort(b, kind="stable")
    k = int(np.argmax(np.diff(sb)))
    thr = sb[k + 1]
    return SelectionResult(tuple(int(j) for j in np.flatnonzero(b >= thr)), "gap")


def gap_procedure(d: LabeledDataset) -> tuple[int, ...]:
    return gap_selection(beta_sq_hat_all(w_matrix(d))).set


def split_halves(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded 50/50 row split; both halves returned in ascending row order."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    perm = rng.permutation(n)
    return np.sort(perm[: n // 2]), np.sort(perm[n // 2:])


def select(d: LabeledDataset, procedure="gap", split_seed: int | None = None) -> SelectionResult:
    """Run a selection procedure, on the first half of a seeded split if requested.

    ``procedure`` is ``"gap"``, ``"all"``, an explicit index list, or any
    callable mapping a dataset to indices.
    """
    if split_seed is not None:
        first, _ = split_halves(d.n, split_seed)
        d = d.take_rows(first)
    if isinstance(procedure, str):
        if procedure == "gap":
            return SelectionResult(gap_procedure(d), "gap", split_seed)
        if procedure == "all":
            return SelectionResult(tuple(range(d.p)), "all", split_seed)
        raise ValueError(f"unknown selection procedure {procedure!r}")
    chosen = procedure(d) if callable(procedure) else procedure
    return SelectionResult(_index_set(chosen, d.p), "external", split_seed)


def _distinct_triple_sum(a, b, c) -> float:
    """sum over distinct (i, k, l) of a_i b_k c_l."""
    sa, sb, sc = a.sum(), b.sum(), c.sum()
    return float(
        sa * sb * sc - (a @ b) * sc - (a @ c) * sb - (b @ c) * sa + 2.0 * np.sum(a * b * c)
    )


def psi_hat(w: WMatrix, d: LabeledDataset, j: int, jp: int) -> float:
    """Order-3 U-statistic estimate of beta_j beta_jp E[X_j X_jp - delta]."""
    _require_whitened(d)
    n = w.n
    if n < 3:
        raise ValueError(f"psi_hat needs n >= 3, got n={n}")
    c = d.x[:, j] * d.x[:, jp] - (1.0 if j == jp else 0.0)
    return _distinct_triple_sum(w.w[:, j], w.w[:, jp], c) / (n * (n - 1) * (n - 2))


def psi_sum(w: WMatrix, d: LabeledDataset, s) -> float:
    """sum_{j, k in s} psi_hat(j, k) over ordered pairs, in O(n |s|^2).

    With U_il = W_i,s . X_l,s the triple sum collapses to
    sum_l [(sum_{i!=l} U_il)^2 - sum_{i!=l} U_il^2] - (n-2) sum_{i!=k} W_i,s . W_k,s.
    """
    _require_whitened(d)
    n = w.n
    if n < 3:
        raise ValueError(f"psi_sum needs n >= 3, got n={n}")
    s = list(s)
    if not s:
        return 0.0
    ws, xs = w.w[:, s], d.x[:, s]
    colsum = ws.sum(axis=0)
    diag_u = np.einsum("ij,ij->i", ws, xs)
    off_row = xs @ colsum - diag_u
    off_sq = np.einsum("ij,ij->i", xs @ (ws.T @ ws), xs) - diag_u**2
    pair = colsum @ colsum - np.einsum("ij,ij->", ws, ws)
    total = float(np.sum(off_row**2 - off_sq) - (n - 2) * pair)
    return total / (n * (n - 1) * (n - 2))


def t_selection_linear(w: WMatrix, d: LabeledDataset, s: SelectionResult,
                       split_seed: int | None = None) -> Estimate:
    """tau2_hat - 2 * sum_{j,k in s} psi_hat(j, k).

    With ``split_seed`` the psi terms are evaluated on the second half of the
    seeded split (``s`` is expected to come from the first half, see
    :func:`select`); the naive term always uses the full sample.
    """
    tau2 = naive_value(w)
    corr_w, corr_d = w, d
    if split_seed is not None:
        _, second = split_halves(d.n, split_seed)
        corr_d = d.take_rows(second)
        corr_w = w_matrix(corr_d)
    value = tau2 - 2.0 * psi_sum(corr_w, corr_d, s.set) if s.set else tau2
    method = "full_psi" if len(s.set) == d.p and s.procedure == "all" else "selection"
    return Estimate(value=float(value), method=method, selection_set=s.set,
                    details={"selection": s.to_dict()})


def selection_estimator(d: LabeledDataset, procedure="gap", split_seed: int | None = None) -> Estimate:
    s = select(d, procedure, split_seed)
    return t_selection_linear(w_matrix(d), d, s, split_seed)


def oracle_ooe(w: WMatrix, d: LabeledDataset, beta_true) -> Estimate:
    """tau2_hat - 2 * beta' H beta with H = mean_i X_i X_i' - I, using the true beta."""
    _require_whitened(d)
    beta = np.asarray(beta_true, dtype=float)
    xb = d.x @ beta
    corr = xb @ xb / d.n - beta @ beta
    return Estimate(value=naive_value(w) - 2.0 * float(corr), method="oracle")


def theta_pairwise(beta, s=None) -> np.ndarray:
    """E[W_j g(X)] for the pairwise g over ``s`` when covariates are independent.

    Only j in s contributes, with theta_j = sum_{m in s, m != j} beta_m.
    Also valid for additive nonlinear responses with beta the best linear fit.
    """
    beta = np.asarray(beta, dtype=float)
    idx = list(_index_set(s, beta.shape[0]))
    theta = np.zeros_like(beta)
    theta[idx] = beta[idx].sum() - beta[idx]
    return theta


def oracle_single(w: WMatrix, d: LabeledDataset, beta_true, theta_true, z: ZeroStat) -> Estimate:
    c_star = 2.0 * float(np.dot(beta_true, theta_true)) / z.var_g
    return Estimate(value=naive_value(w) - c_star * z.value, method="oracle_single",
                    details={"c": c_star})


def var_selection_hat(var_naive: float, beta_sq_sel, n: int, fourth_moments=None) -> float:
    """Variance estimate for the selection estimator (raw, possibly negative).

    Gaussian form subtracts (8/n)(sum beta_j^2)^2; with per-covariate fourth
    moments the general form
    (4/n)[sum b_j^2 (m4_j - 1) + 2 sum_{j != k} b_j b_k] is subtracted, b = beta^2.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    b = np.asarray(beta_sq_sel, dtype=float)
    if b.size == 0:
        return float(var_naive)
    tb = b.sum()
    if fourth_moments is None:
        return float(var_naive - 8.0 / n * tb * tb)
    m4 = np.broadcast_to(np.asarray(fourth_moments, dtype=float), b.shape)
    cross = tb * tb - b @ b
    return float(var_naive - 4.0 / n * (np.sum(b * b * (m4 - 1.0)) + 2.0 * cross))


def var_single_hat(var_naive_tilde: float, w: WMatrix, d: LabeledDataset, z: ZeroStat) -> float:
    """Variance estimate for the single-coefficient estimator.

    Subtracts num^2 / (n Var[g]) where num is the U-statistic
    2/(n(n-1)) sum_{i != k} W_i . W_k g_k estimating 2 beta' theta.
    """
    num = c_hat_numerator(w, z.row_values)
    return float(var_naive_tilde - num * num / (w.n * z.var_g))
