import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from signal_level.datamodel import LabeledDataset, UnlabeledDataset
from signal_level.errors import DataFormatError, DegenerateCovarianceError
from signal_level.whitening import CovariateModel, band, estimate_moments, inv_sqrt, whiten


def _spd(seed, p):
    a = np.random.default_rng(seed).standard_normal((p, p))
    return a @ a.T + p * np.eye(p)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 8))
def test_inv_sqrt_squares_to_inverse(seed, p):
    s = _spd(seed, p)
    r, floored = inv_sqrt(s)
    assert not floored
    np.testing.assert_allclose(r, r.T, atol=1e-14)
    np.testing.assert_allclose(r @ s @ r, np.eye(p), atol=1e-10)


def test_inv_sqrt_diagonal_exact():
    r, _ = inv_sqrt(np.diag([4.0, 9.0, 0.25]))
    np.testing.assert_allclose(r, np.diag([0.5, 1 / 3, 2.0]), rtol=1e-14)


def test_inv_sqrt_singular():
    s = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(DegenerateCovarianceError):
        inv_sqrt(s)
    r, floored = inv_sqrt(s, clamp=True)
    assert floored and np.all(np.isfinite(r))
    with pytest.raises(DegenerateCovarianceError):
        inv_sqrt(np.zeros((2, 2)))
    with pytest.raises(DegenerateCovarianceError):
        inv_sqrt(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_whiten_gives_identity_sample_moments():
    rng = np.random.default_rng(3)
    p = 4
    a = rng.standard_normal((p, p))
    u = UnlabeledDataset(rng.standard_normal((500, p)) @ a.T + 5.0)
    m = estimate_moments(u)
    wu = whiten(m, u)
    assert wu.whitened
    np.testing.assert_allclose(wu.x.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(wu.x.T @ wu.x / u.n, np.eye(p), atol=1e-10)


def test_estimate_moments_needs_enough_rows():
    u = UnlabeledDataset(np.random.default_rng(0).standard_normal((4, 6)))
    with pytest.raises(DegenerateCovarianceError, match="banded"):
        estimate_moments(u)
    m = estimate_moments(u, bandwidth=1)
    assert m.bandwidth == 1 and m.source == "estimated" and m.n_unlabeled == 4


def test_band():
    s = np.arange(16.0).reshape(4, 4)
    b = band(s, 1)
    assert b[0, 2] == 0 and b[0, 1] == 1 and b[3, 3] == 15 and b[3, 0] == 0
    np.testing.assert_array_equal(band(s, 3), s)


def test_identity_model_is_noop():
    d = LabeledDataset(np.arange(6.0).reshape(3, 2), np.ones(3))
    w = whiten(CovariateModel.identity(2), d)
    np.testing.assert_array_equal(w.x, d.x)
    assert w.whitened


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        whiten(CovariateModel.identity(3), LabeledDataset(np.ones((3, 2)), np.ones(3)))


def test_json_round_trip():
    m = CovariateModel.known(np.array([1.0, -2.0]), _spd(1, 2))
    back = CovariateModel.from_json(m.to_json())
    np.testing.assert_array_equal(back.mu, m.mu)
    np.testing.assert_array_equal(back.sigma, m.sigma)
    np.testing.assert_allclose(back.sigma_inv_sqrt, m.sigma_inv_sqrt, rtol=1e-14)
    assert back.source == "known"


def test_json_rejects_garbage():
    with pytest.raises((DataFormatError, ValueError)):
        CovariateModel.from_json('{"format": "something else"}')
