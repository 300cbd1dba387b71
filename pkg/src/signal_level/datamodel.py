"""Datasets, CSV ingestion and the preprocessing steps used on real data.

All indices in the Python API are 0-based.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataFormatError

CACHE_FORMAT = "signal_level.dataset"
CACHE_VERSION = 1


def _frozen_array(a, ndim, what):
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise DataFormatError(f"{what} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise DataFormatError(f"{what} has a non-finite entry at index {tuple(int(i) for i in bad)}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LabeledDataset:
    """Covariates ``x`` (n x p) with response ``y`` (n,).

    ``whitened`` records that ``x`` has been mapped to mean zero and identity
    covariance by a :class:`~signal_level.whitening.CovariateModel`.
    Arrays are copied and made read-only on construction.
    """

    x: np.ndarray
    y: np.ndarray
    whitened: bool = False
    column_names: tuple[str, ...] | None = None

    def __post_init__(self):
        x = _frozen_array(self.x, 2, "x")
        y = _frozen_array(self.y, 1, "y")
        if x.shape[0] != y.shape[0]:
            raise DataFormatError(f"x has {x.shape[0]} rows but y has {y.shape[0]} entries")
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise DataFormatError(f"dataset needs at least one row and one column, got {x.shape}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.column_names is not None:
            names = tuple(str(c) for c in self.column_names)
            if len(names) != x.shape[1]:
                raise DataFormatError(f"{len(names)} column names for {x.shape[1]} columns")
            object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def names(self) -> tuple[str, ...]:
        if self.column_names is not None:
            return self.column_names
        return tuple(f"x{j}" for j in range(self.p))

    def take_rows(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows, dtype=np.intp)
        return replace(self, x=self.x[rows], y=self.y[rows])

    def with_response(self, y) -> "LabeledDataset":
        return replace(self, y=y)


@dataclass(frozen=True)
class UnlabeledDataset:
    """Covariate rows without a response (N x p)."""

    x: np.ndarray
    whitened: bool = False
    column_names: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        x = _frozen_array(self.x, 2, "x")
        if x.shape[0] < 2:
            raise DataFormatError(f"unlabeled sample needs at least 2 rows, got {x.shape[0]}")
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


# ---------------------------------------------------------------- CSV


def _read_rows(path, has_header):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataFormatError(f"{path}: file is empty")
    header = None
    if has_header:
        header, rows = [h.strip() for h in rows[0]], rows[1:]
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    width = len(header) if header is not None else len(rows[0])
    values = np.empty((len(rows), width))
    first_line = 2 if has_header else 1
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataFormatError(
                f"{path}: line {i + first_line} has {len(row)} fields, expected {width}"
            )
        for j, cell in enumerate(row):
            col = header[j] if header is not None else str(j)
            try:
                v = float(cell)
            except ValueError:
                raise DataFormatError(
                    f"{path}: line {i + first_line}, column {col!r}: cannot parse {cell!r}"
                ) from None
            if not np.isfinite(v):
                raise DataFormatError(
                    f"{path}: line {i + first_line}, column {col!r}: "
                    f"non-finite value {cell!r} (missing values are not imputed)"
                )
            values[i, j] = v
    return header, values


def _resolve_column(header, width, column):
    if isinstance(column, (int, np.integer)):
        idx = int(column)
        if not -width <= idx < width:
            raise DataFormatError(f"response column index {idx} out of range for {width} columns")
        return idx % width
    if header is None:
        try:
            return _resolve_column(None, width, int(column))
        except ValueError:
            raise DataFormatError(
                f"response column {column!r} given by name but the file has no header"
            ) from None
    if column not in header:
        raise DataFormatError(f"response column {column!r} absent (columns: {', '.join(header)})")
    return header.index(column)


def load_csv(path, response_column, has_header: bool = True) -> LabeledDataset:
    """Read a comma-separated file into a :class:`LabeledDataset`.

    ``response_column`` is a header name or a 0-based column index.
    Non-numeric and non-finite cells raise :class:`DataFormatError` naming
    the line and column.
    """
    header, values = _read_rows(path, has_header)
    r = _resolve_column(header, values.shape[1], response_column)
    keep = [j for j in range(values.shape[1]) if j != r]
    names = tuple(header[j] for j in keep) if header is not None else None
    return LabeledDataset(x=values[:, keep], y=values[:, r], column_names=names)


def load_unlabeled_csv(path, has_header: bool = True) -> UnlabeledDataset:
    header, values = _read_rows(path, has_header)
    return UnlabeledDataset(x=values, column_names=tuple(header) if header else None)


def write_csv(d: LabeledDataset, path, response_name: str = "y") -> None:
    """Write ``d`` with the response as the last column.

    Values use the shortest round-trip representation, so reading the file
    back reproduces every float exactly.
    """
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*d.names(), response_name])
        for xi, yi in zip(d.x, d.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


# ---------------------------------------------------------------- binary cache


def save_cache(d: LabeledDataset, path) -> None:
    np.savez(
        path,
        format=np.array(CACHE_FORMAT),
        version=np.array(CACHE_VERSION),
        x=d.x,
        y=d.y,
        whitened=np.array(d.whitened),
        names=np.array(d.names(), dtype=str),
    )


def load_cache(path) -> LabeledDataset:
    with np.load(path, allow_pickle=False) as z:
        if "format" not in z or str(z["format"]) != CACHE_FORMAT:
            raise DataFormatError(f"{path}: not a dataset cache")
        if int(z["version"]) != CACHE_VERSION:
            raise DataFormatError(f"{path}: unsupported cache version {int(z['version'])}")
        return LabeledDataset(
            x=z["x"],
            y=z["y"],
            whitened=bool(z["whitened"]),
            column_names=tuple(str(s) for s in z["names"]),
        )


# ---------------------------------------------------------------- preprocessing


def add_pairwise_interactions(d: LabeledDataset, subset: Sequence[int] | None = None) -> LabeledDataset:
    """Append ``x_j * x_k`` for every pair ``j < k`` drawn from ``subset``.

    Original columns come first; new columns are named ``"a×b"``.
    """
    idx = list(range(d.p)) if subset is None else [int(j) for j in subset]
    for j in idx:
        if not 0 <= j < d.p:
            raise IndexError(f"interaction index {j} out of range for p={d.p}")
    if len(set(idx)) != len(idx):
        raise ValueError("interaction subset contains duplicates")
    idx.sort()
    pairs = list(itertools.combinations(idx, 2))
    if not pairs:
        return d
    names = d.names()
    extra = np.column_stack([d.x[:, a] * d.x[:, b] for a, b in pairs])
    new_names = names + tuple(f"{names[a]}×{names[b]}" for a, b in pairs)
    return replace(d, x=np.hstack([d.x, extra]), column_names=new_names)


def drop_collinear(d: LabeledDataset, tol: float = 1e-8) -> tuple[LabeledDataset, list[int]]:
    """Greedy left-to-right pruning of (near) linearly dependent columns.

    A column is dropped when its residual after projecting onto the span
    of the columns kept so far has norm <= ``tol`` times its own norm.
    Projection is done twice (classical Gram-Schmidt with one
    re-orthogonalization pass), which keeps the basis orthonormal to
    machine precision.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    n = d.n
    basis = np.empty((n, min(n, d.p)))
    k = 0
    kept: list[int] = []
    for j in range(d.p):
        v = d.x[:, j]
        norm = np.linalg.norm(v)
        if norm == 0 or k == n:
            continue
        r = v.copy()
        for _ in range(2):
            q = basis[:, :k]
            r -= q @ (q.T @ r)
        rn = np.linalg.norm(r)
        if rn <= tol * norm:
            continue
        basis[:, k] = r / rn
        k += 1
        kept.append(j)
    names = d.names()
    out = replace(d, x=d.x[:, kept], column_names=tuple(names[j] for j in kept))
    return out, kept


def ols_tvalues(d: LabeledDataset) -> np.ndarray:
    """t-statistics of the slope coefficients from OLS with an intercept."""
    n, p = d.n, d.p
    if n <= p + 1:
        raise ValueError(f"OLS t-values need n > p + 1 (n={n}, p={p})")
    design = np.hstack([np.ones((n, 1)), d.x])
    q, r = np.linalg.qr(design)
    if np.min(np.abs(np.diag(r))) <= 1e-12 * np.max(np.abs(np.diag(r))):
        raise ValueError("design matrix is rank deficient; run drop_collinear first")
    coef = np.linalg.solve(r, q.T @ d.y)
    resid = d.y - design @ coef
    s2 = resid @ resid / (n - p - 1)
    rinv = np.linalg.solve(r, np.eye(p + 1))
    se = np.sqrt(s2 * np.sum(rinv**2, axis=1))
    return coef[1:] / se[1:]


def top_tvalue_columns(d: LabeledDataset, k: int) -> list[int]:
    """Indices of the ``k`` columns with largest ``|t|``; ties go to the lower index."""
    t = np.abs(ols_tvalues(d))
    order = sorted(range(d.p), key=lambda j: (-t[j], j))
    return order[: min(k, d.p)]
