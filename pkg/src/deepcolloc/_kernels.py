"""Fused elementwise kernels for tanh layers carrying spatial jets.

Each kernel reproduces the corresponding numpy expression in ``autodiff`` but
walks the data once.  The numpy versions stay available (``use_fused_kernels(False)``)
and the test-suite checks the two against each other.
"""

from __future__ import annotations

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False


def _jet_forward(f, Dz, order, f1, f2, Dout):
    w, n = f.shape
    for o in range(w):
        for i in range(n):
            fi = f[o, i]
            d1 = 1.0 - fi * fi
            f1[o, i] = d1
            if order >= 1:
                j0 = Dz[o, 0, i]
                j1 = Dz[o, 1, i]
                j2 = Dz[o, 2, i]
                Dout[o, 0, i] = d1 * j0
                Dout[o, 1, i] = d1 * j1
                Dout[o, 2, i] = d1 * j2
                if order == 2:
                    d2 = -2.0 * fi * d1
                    f2[o, i] = d2
                    Dout[o, 3, i] = d1 * Dz[o, 3, i] + d2 * j0 * j0
                    Dout[o, 4, i] = d1 * Dz[o, 4, i] + d2 * j1 * j1
                    Dout[o, 5, i] = d1 * Dz[o, 5, i] + d2 * j2 * j2
                    Dout[o, 6, i] = d1 * Dz[o, 6, i] + d2 * j0 * j1
                    Dout[o, 7, i] = d1 * Dz[o, 7, i] + d2 * j0 * j2
                    Dout[o, 8, i] = d1 * Dz[o, 8, i] + d2 * j1 * j2


def _jet_backward(abar, Dbar, f, f1, f2, Dz, order, zbar, Dzbar):
    w, n = f.shape
    for o in range(w):
        for i in range(n):
            fi = f[o, i]
            d1 = f1[o, i]
            zb = abar[o, i] * d1
            if order >= 1:
                b0 = Dbar[o, 0, i]
                b1 = Dbar[o, 1, i]
                b2 = Dbar[o, 2, i]
                j0 = Dz[o, 0, i]
                j1 = Dz[o, 1, i]
                j2 = Dz[o, 2, i]
                f1bar = b0 * j0 + b1 * j1 + b2 * j2
                g0 = d1 * b0
                g1 = d1 * b1
                g2 = d1 * b2
                if order == 2:
                    d2 = f2[o, i]
                    h0 = Dbar[o, 3, i]
                    h1 = Dbar[o, 4, i]
                    h2 = Dbar[o, 5, i]
                    h3 = Dbar[o, 6, i]
                    h4 = Dbar[o, 7, i]
                    h5 = Dbar[o, 8, i]
                    for p in range(6):
                        Dzbar[o, 3 + p, i] = d1 * Dbar[o, 3 + p, i]
                        f1bar += Dbar[o, 3 + p, i] * Dz[o, 3 + p, i]
                    g0 += d2 * (2.0 * h0 * j0 + h3 * j1 + h4 * j2)
                    g1 += d2 * (2.0 * h1 * j1 + h3 * j0 + h5 * j2)
                    g2 += d2 * (2.0 * h2 * j2 + h4 * j0 + h5 * j1)
                    f2bar = h0 * j0 * j0 + h1 * j1 * j1 + h2 * j2 * j2 + h3 * j0 * j1 + h4 * j0 * j2 + h5 * j1 * j2
                    zb += f2bar * (d1 * (6.0 * fi * fi - 2.0))
                zb += f1bar * (-2.0 * fi * d1)
                Dzbar[o, 0, i] = g0
                Dzbar[o, 1, i] = g1
                Dzbar[o, 2, i] = g2
            zbar[o, i] = zb


if HAVE_NUMBA:
    _jet_forward_nb = numba.njit(cache=True, fastmath=False)(_jet_forward)
    _jet_backward_nb = numba.njit(cache=True, fastmath=False)(_jet_backward)


def jet_forward(f, Dz, order):
    """Return ``(f1, f2, Dout)`` for a tanh layer with activations ``f``."""
    f1 = np.empty_like(f)
    f2 = np.empty_like(f) if order == 2 else None
    Dout = np.empty_like(Dz) if Dz is not None else None
    _jet_forward_nb(
        f,
        Dz if Dz is not None else np.empty((1, 1, 1)),
        order,
        f1,
        f2 if f2 is not None else np.empty((1, 1)),
        Dout if Dout is not None else np.empty((1, 1, 1)),
    )
    return f1, f2, Dout


def jet_backward(abar, Dbar, f, f1, f2, Dz, order):
    """Return ``(zbar, Dzbar)`` for a tanh layer."""
    zbar = np.empty_like(f)
    Dzbar = np.empty_like(Dbar) if Dbar is not None else None
    dummy3 = np.empty((1, 1, 1))
    _jet_backward_nb(
        abar,
        Dbar if Dbar is not None else dummy3,
        f,
        f1,
        f2 if f2 is not None else np.empty((1, 1)),
        Dz if Dz is not None else dummy3,
        order if Dbar is not None else 0,
        zbar,
        Dzbar if Dzbar is not None else dummy3,
    )
    return zbar, Dzbar
