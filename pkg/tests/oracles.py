"""Independent reference implementations used as test oracles.

Nothing here imports the package's autodiff, loss or materials code.  The
network jets are recomputed with full 3x3 Hessians in long double precision,
and the bilinear-hardening oracle is a closed-form 1D formula.
"""

from __future__ import annotations

import math

import numpy as np

LD = np.longdouble


def net_jets_ld(weights, biases, X):
    """Value, Jacobian ``(N,3,3)`` and Hessian ``(N,3,3,3)`` in long double."""
    a = np.asarray(X, dtype=LD).T  # (3, N)
    n = a.shape[1]
    J = np.zeros((3, 3, n), dtype=LD)
    for d in range(3):
        J[d, d] = 1
    Hs = np.zeros((3, 3, 3, n), dtype=LD)
    last = len(weights) - 1
    for l, (W, b) in enumerate(zip(weights, biases)):
        W = np.asarray(W, dtype=LD)
        z = np.einsum("oi,in->on", W, a) + np.asarray(b, dtype=LD)[:, None]
        Jz = np.einsum("oi,ijn->ojn", W, J)
        Hz = np.einsum("oi,ijkn->ojkn", W, Hs)
        if l == last:
            a, J, Hs = z, Jz, Hz
        else:
            t = np.tanh(z)
            d1 = 1 - t * t
            d2 = -2 * t * d1
            a = t
            J = d1[:, None, :] * Jz
            Hs = d1[:, None, None, :] * Hz + d2[:, None, None, :] * Jz[:, :, None, :] * Jz[:, None, :, :]
    return a.T, np.transpose(J, (2, 0, 1)), np.transpose(Hs, (3, 0, 1, 2))


def unflatten_ld(widths, vec):
    vec = np.asarray(vec)
    ws, bs, k = [], [], 0
    for i, o in zip(widths[:-1], widths[1:]):
        ws.append(vec[k : k + o * i].reshape(o, i))
        k += o * i
        bs.append(vec[k : k + o])
        k += o
    assert k == len(vec)
    return ws, bs


def elastic_loss_ld(widths, vec, lam, mu, interior, ess_pts, ess_tgt, ess_mask, tr_pts, tr_nrm, tr_tgt, lam_u=1.0, lam_t=1.0):
    """Collocation loss for small-strain elasticity, written out independently.

    Residual ``mu lap u + (lam + mu) grad div u``; traction ``sigma n``.
    """
    ws, bs = unflatten_ld(widths, vec)
    lam, mu = LD(lam), LD(mu)
    _, _, H = net_jets_ld(ws, bs, interior)
    lap = np.einsum("nijj->ni", H)
    graddiv = np.einsum("njji->ni", H)
    r = mu * lap + (lam + mu) * graddiv
    mse_g = np.sum(r * r) / len(interior)
    u, _, _ = net_jets_ld(ws, bs, ess_pts)
    e = (u - np.asarray(ess_tgt, dtype=LD)) * np.asarray(ess_mask, dtype=LD)
    mse_u = np.sum(e * e) / len(ess_pts)
    _, G, _ = net_jets_ld(ws, bs, tr_pts)
    eps = 0.5 * (G + np.transpose(G, (0, 2, 1)))
    tr = np.einsum("nii->n", eps)
    sig = lam * tr[:, None, None] * np.eye(3, dtype=LD) + 2 * mu * eps
    t = np.einsum("nij,nj->ni", sig, np.asarray(tr_nrm, dtype=LD)) - np.asarray(tr_tgt, dtype=LD)
    mse_t = np.sum(t * t) / len(tr_pts)
    return mse_g + LD(lam_u) * mse_u + LD(lam_t) * mse_t


def central_difference_gradient(f, x, step=1e-6):
    """Central differences of a long double scalar function."""
    x = np.asarray(x, dtype=LD)
    g = np.zeros(len(x), dtype=LD)
    h = LD(step)
    for i in range(len(x)):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def max_relative_error(analytic, numeric, floor=1e-12):
    a = np.asarray(analytic, dtype=LD)
    n = np.asarray(numeric, dtype=LD)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), LD(floor))
    return float(np.max(np.abs(a - n) / denom))


def uniaxial_strain_bilinear(strains, mu, kappa, sigma_y, K):
    """Closed-form axial stress and alpha for monotonic uniaxial strain, isotropic hardening.

    Under eps = diag(e, 0, 0) the deviatoric strain is e * diag(2/3, -1/3, -1/3)
    and its norm is E = sqrt(2/3) |e|.  While elastic the deviatoric stress
    norm is 2 mu E.  Once 2 mu E exceeds sqrt(2/3) (sigma_y + K alpha) the
    consistency condition for a fixed flow direction gives
    alpha = (2 mu E - sqrt(2/3) sigma_y) / (2 mu sqrt(3/2) + sqrt(2/3) K)
    and ||s|| = sqrt(2/3) (sigma_y + K alpha).
    """
    out_sigma, out_alpha = [], []
    c = math.sqrt(2.0 / 3.0)
    for e in strains:
        E = c * abs(e)
        alpha = max(0.0, (2.0 * mu * E - c * sigma_y) / (2.0 * mu * math.sqrt(1.5) + c * K))
        s_norm = 2.0 * mu * E if alpha == 0.0 else c * (sigma_y + K * alpha)
        s11 = math.copysign(s_norm * math.sqrt(2.0 / 3.0), e)  # s = ||s|| n, n11 = sqrt(2/3) sign(e)
        out_sigma.append(kappa * e + s11)
        out_alpha.append(alpha)
    return np.array(out_sigma), np.array(out_alpha)


def linear_elastic_divergence_from_hessian(H, lam, mu):
    """``mu lap u + (lam + mu) grad div u`` from a full Hessian ``H[n,i,j,k]``."""
    return mu * np.einsum("nijj->ni", H) + (lam + mu) * np.einsum("njji->ni", H)


def neo_hookean_energy_ld(F, lam, mu):
    """Compressible neo-Hookean energy of one ``3x3`` F in long double."""
    F = np.asarray(F, dtype=LD)
    J = (
        F[0, 0] * (F[1, 1] * F[2, 2] - F[1, 2] * F[2, 1])
        - F[0, 1] * (F[1, 0] * F[2, 2] - F[1, 2] * F[2, 0])
        + F[0, 2] * (F[1, 0] * F[2, 1] - F[1, 1] * F[2, 0])
    )
    lnJ = np.log(J)
    return LD(lam) / 2 * lnJ * lnJ - LD(mu) * lnJ + LD(mu) / 2 * (np.sum(F * F) - 3)


def j2_yield_value(sigma, q, alpha, sigma_y, K):
    """``||dev(sigma) - q|| - sqrt(2/3) (sigma_y + K alpha)`` for batches of tensors."""
    sigma = np.asarray(sigma, dtype=float)
    dev = sigma - np.trace(sigma, axis1=-2, axis2=-1)[..., None, None] * np.eye(3) / 3.0
    eta = dev - q
    return np.sqrt(np.sum(eta * eta, axis=(-2, -1))) - math.sqrt(2.0 / 3.0) * (sigma_y + K * np.asarray(alpha))
