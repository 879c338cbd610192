"""Constitutive laws: small-strain elasticity, compressible neo-Hookean, J2 plasticity.

Point-wise functions operate on ``(..., 3, 3)`` stacks.  The ``*Model`` classes
wrap them for the collocation loss: ``stress`` and ``divergence`` return
``(value, vjp, invalid)`` where ``vjp`` maps an adjoint of the value back onto
the displacement gradient ``G = du/dX`` (and, for the divergence, onto the
displacement Hessian ``H[n, k, l, j] = d2u_k/dX_l dX_j``), and ``invalid`` is
a mask of inverted points for finite-strain models (``None`` otherwise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import smalltensor as st
from .errors import NonPositiveJacobian

I3 = np.eye(3)
SQRT23 = math.sqrt(2.0 / 3.0)
JACOBIAN_TOL = 1e-10


@dataclass(frozen=True)
class MaterialConstants:
    """Lame constants, bulk modulus and linear hardening data.

    ``kappa`` defaults to ``lam + 2 mu / 3``; an explicit value must agree with
    it to a relative 1e-12.  ``sigma_y`` defaults to infinity, i.e. no yield.
    """

    lam: float
    mu: float
    kappa: float | None = None
    sigma_y: float = math.inf
    K: float = 0.0
    H: float = 0.0

    def __post_init__(self):
        if self.kappa is None:
            object.__setattr__(self, "kappa", self.lam + 2.0 * self.mu / 3.0)
        self.validate()

    def validate(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        expected = self.lam + 2.0 * self.mu / 3.0
        if abs(self.kappa - expected) > 1e-12 * abs(self.kappa):
            raise ValueError(f"kappa={self.kappa} differs from lam + 2 mu/3 = {expected}")
        if not self.sigma_y > 0:
            raise ValueError(f"sigma_y must be positive, got {self.sigma_y}")
        if self.K < 0 or self.H < 0:
            raise ValueError("hardening moduli K and H must be non-negative")

    @classmethod
    def from_young(cls, E: float, nu: float, **kw) -> "MaterialConstants":
        lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        mu = E / (2.0 * (1.0 + nu))
        return cls(lam=lam, mu=mu, **kw)


# ---------------------------------------------------------------------------
# point-wise laws


def small_strain(grad_u):
    return st.sym(grad_u)


def linear_elastic_stress(eps, mats: MaterialConstants):
    eps = np.asarray(eps, dtype=float)
    return mats.lam * st.trace(eps)[..., None, None] * I3 + 2.0 * mats.mu * eps


def deformation_gradient(grad_u):
    return I3 + np.asarray(grad_u, dtype=float)


def _checked_jacobian(F):
    J = st.determinant(F)
    if np.any(J <= JACOBIAN_TOL):
        raise NonPositiveJacobian(f"det(F) <= {JACOBIAN_TOL:g} (min {np.min(J):.3e})")
    return J


def neo_hookean_energy(F, mats: MaterialConstants):
    F = np.asarray(F, dtype=float)
    lnJ = np.log(_checked_jacobian(F))
    I1 = np.sum(F * F, axis=(-2, -1))
    return 0.5 * mats.lam * lnJ**2 - mats.mu * lnJ + 0.5 * mats.mu * (I1 - 3.0)


def neo_hookean_stress(F, mats: MaterialConstants):
    """First Piola-Kirchhoff stress ``mu F + (lam ln J - mu) F^-T``."""
    F = np.asarray(F, dtype=float)
    J = _checked_jacobian(F)
    FinvT = st.cofactor(F) / J[..., None, None]
    c = mats.lam * np.log(J) - mats.mu
    return mats.mu * F + c[..., None, None] * FinvT


@dataclass
class PlasticPointState:
    """History variables: deviatoric plastic strain, back stress, equivalent plastic strain.

    Fields may hold one point (``(3, 3)``, scalar) or a batch (``(N, 3, 3)``, ``(N,)``).
    """

    e_p: np.ndarray
    q: np.ndarray
    alpha: np.ndarray

    @classmethod
    def virgin(cls, n: int | None = None) -> "PlasticPointState":
        if n is None:
            return cls(np.zeros((3, 3)), np.zeros((3, 3)), np.float64(0.0))
        return cls(np.zeros((n, 3, 3)), np.zeros((n, 3, 3)), np.zeros(n))

    def copy(self) -> "PlasticPointState":
        return PlasticPointState(np.array(self.e_p), np.array(self.q), np.array(self.alpha))

    def take(self, idx) -> "PlasticPointState":
        return PlasticPointState(self.e_p[idx], self.q[idx], self.alpha[idx])


@dataclass
class TrialState:
    e_trial: np.ndarray
    s_trial: np.ndarray
    eta_trial: np.ndarray
    y_trial: np.ndarray


def trial_state(eps_next, state: PlasticPointState, mats: MaterialConstants) -> TrialState:
    e = st.deviator(eps_next)
    s = 2.0 * mats.mu * (e - state.e_p)
    eta = s - state.q
    y = st.frobenius_norm(eta) - SQRT23 * (mats.sigma_y + mats.K * state.alpha)
    return TrialState(e, s, eta, y)


def radial_return(trial: TrialState, state: PlasticPointState, eps_next, mats: MaterialConstants):
    """Return-map the trial state; returns ``(sigma, new_state, dgamma)``.

    Points with ``y_trial <= 0`` keep their history bit-for-bit.
    """
    eps_next = np.asarray(eps_next, dtype=float)
    y = np.asarray(trial.y_trial)
    plastic = y > 0.0
    rho = st.frobenius_norm(trial.eta_trial)
    safe_rho = np.where(plastic, rho, 1.0)
    n = trial.eta_trial / np.asarray(safe_rho)[..., None, None]
    dgamma = np.where(plastic, y / (2.0 * (mats.mu + mats.H / 3.0 + mats.K / 3.0)), 0.0)
    dg = dgamma[..., None, None]
    pm = plastic[..., None, None]
    alpha = np.where(plastic, state.alpha + SQRT23 * dgamma, state.alpha)
    q = np.where(pm, state.q + (2.0 / 3.0) * dg * mats.H * n, state.q)
    e_p = np.where(pm, state.e_p + dg * n, state.e_p)
    vol = mats.kappa * st.trace(eps_next)[..., None, None] * I3
    sigma = np.where(pm, vol + trial.s_trial - 2.0 * mats.mu * dg * n, vol + trial.s_trial)
    return sigma, PlasticPointState(e_p, q, alpha), dgamma


def yield_function(sigma, state: PlasticPointState, mats: MaterialConstants):
    eta = st.deviator(sigma) - state.q
    return st.frobenius_norm(eta) - SQRT23 * (mats.sigma_y + mats.K * state.alpha)


def von_mises_stress(sigma):
    return math.sqrt(1.5) * st.frobenius_norm(st.deviator(sigma))


# ---------------------------------------------------------------------------
# batch models used by the loss


def _strain_gradient(H):
    """``D[n, j] = d(eps)/dX_j`` from the displacement Hessian."""
    Hj = np.transpose(H, (0, 3, 1, 2))  # [n, j, k, l] = d2u_k/dX_l dX_j
    return 0.5 * (Hj + np.swapaxes(Hj, -1, -2))


def _strain_gradient_vjp(Dbar):
    Dbar = 0.5 * (Dbar + np.swapaxes(Dbar, -1, -2))
    return np.transpose(Dbar, (0, 2, 3, 1))


def _column_pick(Ds):
    """``sum_j A_j[:, i, j]`` for a stack ``Ds[n, j, i, l]``."""
    return np.einsum("njij->ni", Ds)


def _ej_outer(v):
    """``out[n, j] = v e_j^T`` (dense, ``(N, 3, 3, 3)``)."""
    out = np.zeros(v.shape[:1] + (3, 3, 3))
    for j in range(3):
        out[:, j, :, j] = v
    return out


def _dev_stack(A):
    tr = A[..., 0, 0] + A[..., 1, 1] + A[..., 2, 2]
    return A - (tr / 3.0)[..., None, None] * I3


class LinearElasticModel:
    name = "elastic"
    finite_strain = False

    def __init__(self, mats: MaterialConstants):
        self.mats = mats

    def stress(self, G):
        m = self.mats
        sigma = linear_elastic_stress(st.sym(G), m)

        def vjp(sbar):
            epsbar = m.lam * st.trace(sbar)[..., None, None] * I3 + 2.0 * m.mu * sbar
            return st.sym(epsbar)

        return sigma, vjp, None

    def divergence(self, G, H):
        m = self.mats
        D = _strain_gradient(H)
        trD = D[..., 0, 0] + D[..., 1, 1] + D[..., 2, 2]  # (N, j)
        r = m.lam * trD + 2.0 * m.mu * _column_pick(D)

        def vjp(v):
            Dbar = m.lam * v[:, :, None, None] * I3 + 2.0 * m.mu * _ej_outer(v)
            return np.zeros_like(G), _strain_gradient_vjp(Dbar)

        return r, vjp, None


class NeoHookeanModel:
    """Compressible neo-Hookean law in the reference configuration.

    Points whose ``det F`` is at or below the inversion threshold are returned
    in the ``invalid`` mask and evaluated at ``F = I`` so the batch stays finite; the
    loss decides what to do with them.
    """

    name = "neohookean"
    finite_strain = True

    def __init__(self, mats: MaterialConstants):
        self.mats = mats

    def _kinematics(self, G):
        F = I3 + G
        J = st.determinant(F)
        invalid = ~(J > JACOBIAN_TOL)
        if np.any(invalid):
            F = np.where(invalid[:, None, None], I3, F)
            J = np.where(invalid, 1.0, J)
        FinvT = st.cofactor(F) / J[:, None, None]
        c = self.mats.lam * np.log(J) - self.mats.mu
        return F, FinvT, c, invalid

    def stress(self, G):
        m = self.mats
        F, FinvT, c, invalid = self._kinematics(G)
        P = m.mu * F + c[:, None, None] * FinvT

        def vjp(Pbar):
            cbar = st.ddot(FinvT, Pbar)
            Fbar = (
                m.mu * Pbar
                + (m.lam * cbar)[:, None, None] * FinvT
                - c[:, None, None] * FinvT @ st.transpose(Pbar) @ FinvT
            )
            return np.where(invalid[:, None, None], 0.0, Fbar)

        return P, vjp, invalid

    def divergence(self, G, H):
        m = self.mats
        F, FinvT, c, invalid = self._kinematics(G)
        Gi = st.transpose(FinvT)  # F^-1
        M = np.transpose(H, (0, 3, 1, 2))  # M[n, j] = dF/dX_j
        t = np.einsum("nab,njba->nj", Gi, M)  # tr(F^-1 M_j)
        GiMGi = Gi[:, None] @ M @ Gi[:, None]  # [n, j, a, b]
        r = (
            m.mu * _column_pick(M)
            + m.lam * np.einsum("nj,nji->ni", t, Gi)
            - c[:, None] * np.einsum("njji->ni", GiMGi)
        )

        def vjp(v):
            w = np.einsum("nji,ni->nj", Gi, v)  # F^-1 v
            Mw = np.einsum("njab,nb->nja", M, w)  # M_j w
            Mbar = (
                m.mu * _ej_outer(v)
                + m.lam * w[:, :, None, None] * FinvT[:, None]
                - c[:, None, None, None] * Gi[:, :, :, None] * w[:, None, None, :]
            )
            cbar = -np.einsum("nja,nja->n", Gi, Mw)
            wbar = m.lam * t - c[:, None] * np.einsum("njab,nja->nb", M, Gi)
            Gibar = (
                m.lam * np.einsum("nj,njba->nab", w, M)
                - c[:, None, None] * Mw
                + wbar[:, :, None] * v[:, None, :]
            )
            Fbar = (m.lam * cbar)[:, None, None] * FinvT - FinvT @ Gibar @ FinvT
            Hbar = np.transpose(Mbar, (0, 2, 3, 1))
            keep = ~invalid
            return Fbar * keep[:, None, None], Hbar * keep[:, None, None, None]

        return r, vjp, invalid


class J2PlasticModel:
    """Small-strain J2 plasticity evaluated against a frozen committed history.

    The elastic/plastic branch of every point is decided by the trial yield
    value at the current strain and is held fixed while differentiating.
    """

    name = "j2plastic"
    finite_strain = False

    def __init__(self, mats: MaterialConstants, state: PlasticPointState):
        self.mats = mats
        self.state = state

    def with_state(self, state: PlasticPointState) -> "J2PlasticModel":
        return J2PlasticModel(self.mats, state)

    def _branch(self, G, state):
        m = self.mats
        eps = st.sym(G)
        eta = 2.0 * m.mu * (st.deviator(eps) - state.e_p) - state.q
        rho = st.frobenius_norm(eta)
        R = SQRT23 * (m.sigma_y + m.K * state.alpha)
        plastic = rho - R > 0.0
        beta = m.mu + m.H / 3.0 + m.K / 3.0
        safe_rho = np.where(plastic, rho, 1.0)
        theta = np.where(plastic, (m.mu / beta) * (1.0 - R / safe_rho), 0.0)
        return eps, eta, safe_rho, R, plastic, beta, theta

    def stress(self, G, state: PlasticPointState | None = None):
        m = self.mats
        state = self.state if state is None else state
        eps, eta, rho, R, plastic, beta, theta = self._branch(G, state)
        sigma = (
            m.kappa * st.trace(eps)[:, None, None] * I3
            + state.q
            + (1.0 - theta)[:, None, None] * eta
        )

        def vjp(sbar):
            dtheta = np.where(plastic, (m.mu / beta) * R / rho**2, 0.0)
            etabar = (1.0 - theta)[:, None, None] * sbar - (
                st.ddot(sbar, eta) * dtheta / rho
            )[:, None, None] * eta
            epsbar = m.kappa * st.trace(sbar)[:, None, None] * I3 + 2.0 * m.mu * st.deviator(etabar)
            return st.sym(epsbar)

        return sigma, vjp, None

    def divergence(self, G, H, state: PlasticPointState | None = None):
        m = self.mats
        state = self.state if state is None else state
        eps, eta, rho, R, plastic, beta, theta = self._branch(G, state)
        D = _strain_gradient(H)
        trD = D[..., 0, 0] + D[..., 1, 1] + D[..., 2, 2]
        devD = _dev_stack(D)
        c3 = np.where(plastic, 2.0 * m.mu**2 * R / (beta * rho**3), 0.0)
        s = np.einsum("nkl,njkl->nj", eta, D)  # eta : D_j
        r = (
            m.kappa * trD
            + 2.0 * m.mu * (1.0 - theta)[:, None] * _column_pick(devD)
            - c3[:, None] * np.einsum("nj,nij->ni", s, eta)
        )

        def vjp(v):
            w = np.einsum("ni,nij->nj", v, eta)  # eta^T v
            Dbar = (
                m.kappa * v[:, :, None, None] * I3
                + 2.0 * m.mu * (1.0 - theta)[:, None, None, None] * _dev_stack(_ej_outer(v))
                - c3[:, None, None, None] * w[:, :, None, None] * eta[:, None]
            )
            A = np.einsum("ni,ni->n", v, _column_pick(devD))
            rhobar = -2.0 * m.mu * (m.mu * R / (beta * rho**2)) * A + 3.0 * (c3 / rho) * np.einsum(
                "nj,nj->n", s, w
            )
            etabar = (rhobar / rho)[:, None, None] * eta - c3[:, None, None] * (
                np.einsum("nj,njkl->nkl", w, D) + v[:, :, None] * s[:, None, :]
            )
            etabar = np.where(plastic[:, None, None], etabar, 0.0)
            Gbar = st.sym(2.0 * m.mu * st.deviator(etabar))
            return Gbar, _strain_gradient_vjp(Dbar)

        return r, vjp, None

    def commit(self, G, state: PlasticPointState | None = None):
        """Run the return map at strain ``sym(G)`` and return ``(sigma, new_state)``."""
        state = self.state if state is None else state
        eps = st.sym(G)
        trial = trial_state(eps, state, self.mats)
        sigma, new_state, _ = radial_return(trial, state, eps, self.mats)
        return sigma, new_state


def make_model(kind: str, mats: MaterialConstants, state: PlasticPointState | None = None):
    if kind == "elastic":
        return LinearElasticModel(mats)
    if kind == "neohookean":
        return NeoHookeanModel(mats)
    if kind == "j2plastic":
        if state is None:
            raise ValueError("the plastic model needs a committed state")
        return J2PlasticModel(mats, state)
    raise ValueError(f"unknown model kind {kind!r}")


__all__ = [
    "MaterialConstants",
    "PlasticPointState",
    "TrialState",
    "small_strain",
    "linear_elastic_stress",
    "deformation_gradient",
    "neo_hookean_energy",
    "neo_hookean_stress",
    "trial_state",
    "radial_return",
    "yield_function",
    "von_mises_stress",
    "LinearElasticModel",
    "NeoHookeanModel",
    "J2PlasticModel",
    "make_model",
]
