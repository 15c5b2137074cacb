import numpy as np
from hypothesis import given, strategies as st

from stillpose.rotation import (
    axis_angle_jacobian,
    axis_angle_to_matrix,
    canonicalize_axis_angle,
    skew,
)

finite_vec = st.lists(
    st.floats(-10, 10, allow_nan=False, allow_infinity=False), min_size=3, max_size=3
)


def test_identity_at_zero():
    assert np.allclose(axis_angle_to_matrix(np.zeros(3)), np.eye(3))


def test_small_angle_series_is_first_order_exact():
    # below the switch, R must equal I + [w]x up to O(|w|^2), no 0/0 artifacts
    w = 0.9e-8 * np.array([1.0, -2.0, 0.5])
    r = axis_angle_to_matrix(w)
    assert np.isfinite(r).all()
    assert np.abs(r - (np.eye(3) + skew(w))).max() <= np.dot(w, w)


@given(finite_vec)
def test_rotation_is_orthonormal(v):
    r = axis_angle_to_matrix(np.array(v))
    assert np.abs(r @ r.T - np.eye(3)).max() < 1e-9
    assert abs(np.linalg.det(r) - 1.0) < 1e-9


@given(finite_vec)
def test_canonicalization_preserves_rotation(v):
    v = np.array(v)
    c = canonicalize_axis_angle(v)
    assert np.linalg.norm(c) <= np.pi + 1e-3
    assert np.abs(axis_angle_to_matrix(v) - axis_angle_to_matrix(c)).max() < 1e-9


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-7
    for _ in range(10):
        w = rng.standard_normal(3)
        jac = axis_angle_jacobian(w)
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            fd = (axis_angle_to_matrix(w + e) - axis_angle_to_matrix(w - e)) / (2 * h)
            assert np.abs(fd - jac[k]).max() < 1e-6


def test_jacobian_at_identity_is_skew_basis():
    jac = axis_angle_jacobian(np.zeros(3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        assert np.allclose(jac[k], skew(e))
