"""Axis-angle rotations: exponential map, canonicalization, and exact derivatives."""

from __future__ import annotations

import numpy as np

# Below this angle the closed form divides ~0 by ~0; switch to the series.
_SMALL_ANGLE = 1e-8


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix [v]x for one or many 3-vectors (..., 3) -> (..., 3, 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def axis_angle_to_matrix(omega: np.ndarray) -> np.ndarray:
    """Rodrigues exponential map, (..., 3) -> (..., 3, 3).

    Uses sin/cos coefficients in closed form, with their Taylor series below
    norm 1e-8 so the identity neighborhood is exact instead of 0/0.
    """
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega, axis=-1)
    t2 = theta * theta
    small = theta < _SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - t2 / 6.0, np.sin(theta) / np.where(small, 1.0, theta))
        b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, t2))
    k = skew(omega)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def axis_angle_jacobian(omega: np.ndarray) -> np.ndarray:
    """Exact dR/d(omega_k): (3,) -> (3, 3, 3), axis k first.

    Closed form (Gallego & Yezzi): for theta != 0,
      dR/dw_k = (w_k [w]x + [w x ((I - R) e_k)]x) / theta^2 @ R
    and [e_k]x at the identity.
    """
    omega = np.asarray(omega, dtype=float)
    theta2 = float(omega @ omega)
    rot = axis_angle_to_matrix(omega)
    out = np.empty((3, 3, 3))
    if theta2 < _SMALL_ANGLE**2:
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1.0
            out[k] = skew(e)
        return out
    imr = np.eye(3) - rot
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        out[k] = (omega[k] * skew(omega) + skew(np.cross(omega, imr @ e))) / theta2 @ rot
    return out


def canonicalize_axis_angle(omega: np.ndarray) -> np.ndarray:
    """Wrap rotation vectors to equivalent ones with norm in [0, pi].

    (..., 3) preserved; zero vectors stay zero.
    """
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega, axis=-1)
    wrapped = np.mod(theta + np.pi, 2.0 * np.pi) - np.pi
    scale = np.ones_like(theta)
    nz = theta > 0
    scale[nz] = wrapped[nz] / theta[nz]
    return omega * scale[..., None]
