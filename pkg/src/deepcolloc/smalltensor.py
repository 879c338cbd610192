"""Closed-form 3x3 tensor helpers.

All functions accept a single ``(3, 3)`` matrix or a stack ``(..., 3, 3)`` and
operate on the trailing two axes, so the constitutive code can evaluate every
collocation point at once.
"""

import numpy as np

from .errors import SingularMatrix

SINGULAR_TOL = 1e-14

IDENTITY = np.eye(3)


def determinant(m):
    m = np.asarray(m)
    return (
        m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
        - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
        + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0])
    )


def cofactor(m):
    """Cofactor matrix, so that ``inverse_transpose(m) = cofactor(m) / det(m)``."""
    m = np.asarray(m)
    c = np.empty(m.shape, dtype=np.result_type(m, float))
    c[..., 0, 0] = m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1]
    c[..., 0, 1] = m[..., 1, 2] * m[..., 2, 0] - m[..., 1, 0] * m[..., 2, 2]
    c[..., 0, 2] = m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0]
    c[..., 1, 0] = m[..., 0, 2] * m[..., 2, 1] - m[..., 0, 1] * m[..., 2, 2]
    c[..., 1, 1] = m[..., 0, 0] * m[..., 2, 2] - m[..., 0, 2] * m[..., 2, 0]
    c[..., 1, 2] = m[..., 0, 1] * m[..., 2, 0] - m[..., 0, 0] * m[..., 2, 1]
    c[..., 2, 0] = m[..., 0, 1] * m[..., 1, 2] - m[..., 0, 2] * m[..., 1, 1]
    c[..., 2, 1] = m[..., 0, 2] * m[..., 1, 0] - m[..., 0, 0] * m[..., 1, 2]
    c[..., 2, 2] = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    return c


def inverse_transpose(m):
    """Return ``inv(m).T``.

    Raises
    ------
    SingularMatrix
        If any ``|det(m)| <= 1e-14``.
    """
    det = determinant(m)
    if np.any(np.abs(det) <= SINGULAR_TOL):
        raise SingularMatrix(f"determinant magnitude <= {SINGULAR_TOL:g}")
    return cofactor(m) / np.asarray(det)[..., None, None]


def trace(m):
    m = np.asarray(m)
    return m[..., 0, 0] + m[..., 1, 1] + m[..., 2, 2]


def deviator(m):
    m = np.asarray(m)
    return m - (trace(m) / 3.0)[..., None, None] * IDENTITY


def frobenius_norm(m):
    m = np.asarray(m)
    return np.sqrt(np.sum(m * m, axis=(-2, -1)))


def ddot(a, b):
    """Double contraction ``a : b`` over the trailing two axes."""
    return np.sum(np.asarray(a) * np.asarray(b), axis=(-2, -1))


def sym(m):
    m = np.asarray(m)
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def transpose(m):
    return np.swapaxes(np.asarray(m), -1, -2)
