"""Covariate moment models and the whitening transform x -> S^{-1/2}(x - mu)."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from .datamodel import LabeledDataset, UnlabeledDataset
from .errors import DataFormatError, DegenerateCovarianceError

log = logging.getLogger(__name__)

DEFAULT_FLOOR = 1e-10
JSON_FORMAT = "signal_level.covariate_model"
JSON_VERSION = 1


def _eigh_sym(sigma):
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {sigma.shape}")
    if not np.all(np.isfinite(sigma)):
        raise DegenerateCovarianceError("covariance has non-finite entries")
    sym = 0.5 * (sigma + sigma.T)
    lam, vec = np.linalg.eigh(sym)
    lam_max = lam[-1]
    if not lam_max > 0:
        raise DegenerateCovarianceError(f"largest eigenvalue is {lam_max:.3g}; covariance is not positive")
    return lam, vec, lam_max


def inv_sqrt(sigma, floor: float = DEFAULT_FLOOR, clamp: bool = False):
    """Symmetric inverse square root via the eigendecomposition.

    Eigenvalues below ``floor * max_eigenvalue`` raise
    :class:`DegenerateCovarianceError` unless ``clamp`` is true, in which
    case they are raised to the floor. Returns ``(matrix, floored)`` where
    ``floored`` tells whether any eigenvalue was changed.
    """
    lam, vec, lam_max = _eigh_sym(sigma)
    cut = floor * lam_max
    low = lam < cut
    if np.any(low):
        if not clamp:
            raise DegenerateCovarianceError(
                f"{int(low.sum())} eigenvalue(s) below {cut:.3g} "
                f"(smallest {lam[0]:.3g}, largest {lam_max:.3g})"
            )
        lam = np.where(low, cut, lam)
    out = (vec * lam**-0.5) @ vec.T
    return 0.5 * (out + out.T), bool(np.any(low))


@dataclass(frozen=True)
class CovariateModel:
    """First two moments of the covariate law, plus the whitening matrix.

    ``source`` is ``"known"`` for analytically specified moments and
    ``"estimated"`` for plug-in estimates from ``n_unlabeled`` rows.
    ``floored`` is set when eigenvalue flooring altered ``sigma`` before
    inversion (possible for banded estimates).
    """

    mu: np.ndarray
    sigma: np.ndarray
    sigma_inv_sqrt: np.ndarray
    bandwidth: int | None = None
    source: str = "known"
    n_unlabeled: int | None = None
    floored: bool = False

    def __post_init__(self):
        for name in ("mu", "sigma", "sigma_inv_sqrt"):
            a = np.array(getattr(self, name), dtype=float, copy=True)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        p = self.mu.shape[0]
        if self.sigma.shape != (p, p) or self.sigma_inv_sqrt.shape != (p, p):
            raise ValueError("mu, sigma and sigma_inv_sqrt dimensions disagree")
        if self.source not in ("known", "estimated"):
            raise ValueError(f"unknown source {self.source!r}")

    @property
    def p(self) -> int:
        return self.mu.shape[0]

    @classmethod
    def known(cls, mu, sigma, floor: float = DEFAULT_FLOOR) -> "CovariateModel":
        sigma = np.asarray(sigma, dtype=float)
        root, _ = inv_sqrt(sigma, floor)
        return cls(mu=np.asarray(mu, dtype=float), sigma=sigma, sigma_inv_sqrt=root)

    @classmethod
    def identity(cls, p: int) -> "CovariateModel":
        eye = np.eye(p)
        return cls(mu=np.zeros(p), sigma=eye, sigma_inv_sqrt=eye)

    def to_dict(self) -> dict:
        return {
            "format": JSON_FORMAT,
            "version": JSON_VERSION,
            "p": self.p,
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "bandwidth": self.bandwidth,
            "source": self.source,
            "n_unlabeled": self.n_unlabeled,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "CovariateModel":
        if doc.get("format") != JSON_FORMAT:
            raise DataFormatError("document is not a covariate model")
        if doc.get("version") != JSON_VERSION:
            raise DataFormatError(f"unsupported covariate model version {doc.get('version')!r}")
        mu = np.asarray(doc["mu"], dtype=float)
        sigma = np.asarray(doc["sigma"], dtype=float)
        if sigma.shape != (mu.shape[0], mu.shape[0]):
            raise DataFormatError("sigma shape does not match mu")
        bw = doc.get("bandwidth")
        root, floored = inv_sqrt(sigma, clamp=bw is not None)
        return cls(
            mu=mu,
            sigma=sigma,
            sigma_inv_sqrt=root,
            bandwidth=bw,
            source=doc.get("source", "known"),
            n_unlabeled=doc.get("n_unlabeled"),
            floored=floored,
        )

    @classmethod
    def from_json(cls, text: str) -> "CovariateModel":
        return cls.from_dict(json.loads(text))


def band(sigma, bandwidth: int) -> np.ndarray:
    """Zero every entry with ``|j - k| > bandwidth``."""
    p = sigma.shape[0]
    j, k = np.indices((p, p))
    return np.where(np.abs(j - k) <= bandwidth, sigma, 0.0)


def estimate_moments(u: UnlabeledDataset, bandwidth: int | None = None,
                     floor: float = DEFAULT_FLOOR) -> CovariateModel:
    """Plug-in mean and covariance (divisor N) from unlabeled rows.

    With ``bandwidth`` the covariance is banded and, because a banded
    estimate need not be positive definite, eigenvalues are floored
    instead of rejected; the returned model records whether that happened.
    """
    if not isinstance(u, UnlabeledDataset):
        u = UnlabeledDataset(np.asarray(u))
    nrows, p = u.x.shape
    if bandwidth is not None:
        if int(bandwidth) != bandwidth or bandwidth < 0:
            raise ValueError(f"bandwidth must be a non-negative integer, got {bandwidth}")
        bandwidth = int(bandwidth)
    elif nrows < p + 1:
        raise DegenerateCovarianceError(
            f"full covariance needs N >= p + 1 unlabeled rows (N={nrows}, p={p}); "
            "use a banded estimate"
        )
    mu = u.x.mean(axis=0)
    xc = u.x - mu
    sigma = (xc.T @ xc) / nrows
    sigma = 0.5 * (sigma + sigma.T)
    if bandwidth is not None:
        sigma = band(sigma, bandwidth)
    root, floored = inv_sqrt(sigma, floor, clamp=bandwidth is not None)
    if floored:
        log.warning("banded covariance was not positive definite; eigenvalues floored")
    return CovariateModel(
        mu=mu,
        sigma=sigma,
        sigma_inv_sqrt=root,
        bandwidth=bandwidth,
        source="estimated",
        n_unlabeled=nrows,
        floored=floored,
    )


def whiten(m: CovariateModel, d):
    """Map every row ``x`` to ``sigma_inv_sqrt @ (x - mu)``; returns the same dataset kind."""
    if d.p != m.p:
        raise ValueError(f"model has p={m.p} but dataset has p={d.p}")
    x = (d.x - m.mu) @ m.sigma_inv_sqrt
    if isinstance(d, (LabeledDataset, UnlabeledDataset)):
        return replace(d, x=x, whitened=True)
    raise TypeError(f"cannot whiten {type(d).__name__}")
