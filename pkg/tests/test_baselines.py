import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rlab import baselines as bl
from rlab.errors import ConfigError, ShapeError


def inv3(m):
    """Explicit cofactor inverse of a 2x2 or 3x3 matrix."""
    if m.shape == (2, 2):
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        return np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det
    cof = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            minor = np.delete(np.delete(m, i, 0), j, 1)
            cof[i, j] = (-1) ** (i + j) * (minor[0, 0] * minor[1, 1] - minor[0, 1] * minor[1, 0])
    det = sum(m[0, j] * cof[0, j] for j in range(3))
    return cof.T / det


def oracle_fit(points, degree):
    t = np.arange(len(points), dtype=float)
    A = np.stack([t ** k for k in range(degree + 1)], axis=1)
    return inv3(A.T @ A) @ (A.T @ points)


@pytest.mark.parametrize("degree", [1, 2])
def test_matches_normal_equation_oracle(degree):
    rng = np.random.default_rng(degree)
    for _ in range(100):
        pts = rng.uniform(0, 64, size=(10, 2))
        got = bl.fit(pts, degree).coefficients
        np.testing.assert_allclose(got, oracle_fit(pts, degree), rtol=0, atol=1e-9)


def test_exact_line_and_parabola():
    t = np.arange(10.0)
    line = np.stack([3.0 + 0.5 * t, 40.0 - 1.25 * t], axis=1)
    parab = np.stack([1.0 + 0.2 * t - 0.3 * t * t, 5.0 + 0.05 * t * t], axis=1)
    p1, p2 = bl.fit(line, 1), bl.fit(parab, 2)
    assert np.abs(bl.extrapolate(p1, t) - line).max() < 1e-9
    assert np.abs(bl.extrapolate(p2, t) - parab).max() < 1e-9
    # the model class contains the truth: exact at any horizon
    far = np.arange(10.0, 40.0)
    truth = np.stack([3.0 + 0.5 * far, 40.0 - 1.25 * far], axis=1)
    assert np.abs(bl.extrapolate(p1, far) - truth).max() < 1e-9


def test_linear_on_parabola_residual_closed_form():
    # The least-squares line through t^2 on t = 0..9 is 9 t - 12.
    t = np.arange(10.0)
    poly = bl.fit(t ** 2, 1)
    np.testing.assert_allclose(poly.coefficients[:, 0], [-12.0, 9.0], atol=1e-9)
    for h in (10, 15, 20):
        err = h * h - bl.extrapolate(poly, h)[0]
        assert err == pytest.approx(h * h - 9 * h + 12, abs=1e-9)


def test_extrapolate_at_last_observed_frame():
    pts = np.random.default_rng(0).normal(size=(10, 2))
    poly = bl.fit(pts, 2)
    A = np.array([1.0, 9.0, 81.0])
    np.testing.assert_allclose(bl.extrapolate(poly, 9), A @ poly.coefficients, atol=1e-12)


@settings(max_examples=50)
@given(arrays(np.float64, (10, 2), elements=st.floats(-100, 100)),
       st.floats(-50, 50), st.floats(-50, 50))
def test_translation_equivariance(pts, dx, dy):
    shift = np.array([dx, dy])
    for degree in (1, 2):
        a = bl.extrapolate(bl.fit(pts, degree), np.arange(10, 30))
        b = bl.extrapolate(bl.fit(pts + shift, degree), np.arange(10, 30))
        np.testing.assert_allclose(b - a, np.broadcast_to(shift, a.shape), atol=1e-6)


@settings(max_examples=50)
@given(arrays(np.float64, (10, 2), elements=st.floats(-100, 100)))
def test_quadratic_fit_never_worse_on_window(pts):
    t = np.arange(10.0)
    r1 = ((bl.extrapolate(bl.fit(pts, 1), t) - pts) ** 2).sum()
    r2 = ((bl.extrapolate(bl.fit(pts, 2), t) - pts) ** 2).sum()
    assert r2 <= r1 + 1e-7 * (1 + r1)


def test_rollout_alignment():
    t = np.arange(40.0)
    stream = np.stack([2.0 * t, -t], axis=1)[:, None, :]  # (frames, 1 object, 2)
    pred, truth = bl.baseline_rollout(stream, 1, 20)
    assert pred.shape == truth.shape == (20, 1, 2)
    np.testing.assert_allclose(pred, truth, atol=1e-9)
    np.testing.assert_array_equal(truth[0, 0], stream[10, 0])


def test_errors():
    with pytest.raises(ConfigError):
        bl.fit(np.zeros((10, 2)), 3)
    with pytest.raises(ShapeError):
        bl.baseline_rollout(np.zeros((15, 1, 2)), 1, 10)
