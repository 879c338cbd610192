"""Finite-difference suites behind the ``gradcheck`` command."""

from __future__ import annotations

import numpy as np

from .autodiff import check_gradient, forward_order2
from .geometry import BoxDomain, build_collocation_set, cantilever_bcs, make_rng
from .loss import CollocationLoss, PenaltyWeights
from .materials import MaterialConstants, PlasticPointState, make_model, neo_hookean_energy, neo_hookean_stress
from .network import NetworkArch, flatten, forward, init_params


def _rel(a, b):
    floor = 1e-6 * max(float(np.max(np.abs(a))), 1e-300)
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))


def spatial_derivative_errors(arch=NetworkArch((3, 8, 8, 3)), n_nets=20, n_points=20, seed=0, h=1e-5):
    """Max relative error of jet Jacobians/Hessians against central differences."""
    worst_j = worst_h = 0.0
    for k in range(n_nets):
        p = init_params(arch, seed + k)
        # non-zero biases make the check less special
        p.biases[:] = [make_rng(seed + k, 7 + l).uniform(-0.5, 0.5, b.shape) for l, b in enumerate(p.biases)]
        X = make_rng(seed + k, 50).uniform(0.0, 1.0, (n_points, 3)) * [4.0, 1.0, 1.0]
        jet = forward_order2(p, X, order=2)
        for d in range(3):
            e = np.zeros(3)
            e[d] = h
            fd_j = (forward(p, X + e) - forward(p, X - e)) / (2 * h)
            worst_j = max(worst_j, _rel(jet.jacobian[:, :, d], fd_j))
            jp = forward_order2(p, X + e, order=1).jacobian
            jm = forward_order2(p, X - e, order=1).jacobian
            worst_h = max(worst_h, _rel(jet.hessian[:, :, :, d], (jp - jm) / (2 * h)))
    return worst_j, worst_h


def loss_gradient_errors(n_nets=20, seed=0):
    """Max relative error of the loss parameter gradient for every model kind."""
    arch = NetworkArch((3, 8, 8, 3))
    mats = MaterialConstants.from_young(1.0, 0.3, sigma_y=0.02, K=0.1, H=0.1)
    out = {}
    for kind in ("elastic", "neohookean", "j2plastic"):
        worst = 0.0
        for k in range(n_nets):
            col = build_collocation_set(BoxDomain(), cantilever_bcs(0.2), 20, 12, 16, seed + k)
            states = (PlasticPointState.virgin(20), PlasticPointState.virgin(16))
            model = make_model(kind, mats, states[0])
            loss = CollocationLoss(
                arch, col, model, PenaltyWeights(1.0, 1.0), states=states if kind == "j2plastic" else None, scale=0.2
            )
            x = flatten(init_params(arch, seed + 100 + k)) * 0.5
            # float64 differences carry ~1e-10 absolute noise; components far
            # below the gradient's scale are compared against that scale
            gmax = float(np.max(np.abs(loss(x)[1])))
            worst = max(worst, check_gradient(loss, x, step=1e-6, floor=1e-4 * gmax))
        out[kind] = worst
    return out


def neo_hookean_stress_error(n=100, seed=0, h=1e-6):
    """Max relative error of P against central differences of the energy."""
    rng = make_rng(seed, 11)
    mats = MaterialConstants(lam=1.3, mu=0.7)
    worst = 0.0
    count = 0
    while count < n:
        F = np.eye(3) + rng.uniform(-0.3, 0.3, (3, 3))
        if np.linalg.det(F) <= 0.5:
            continue
        count += 1
        P = neo_hookean_stress(F, mats)
        fd = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                E = np.zeros((3, 3))
                E[i, j] = h
                fd[i, j] = (neo_hookean_energy(F + E, mats) - neo_hookean_energy(F - E, mats)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(P - fd)) / max(np.max(np.abs(P)), 1e-12)))
    return worst


def run_all(seed: int = 0, tol: float = 1e-6) -> tuple[bool, dict]:
    jac, hess = spatial_derivative_errors(seed=seed)
    results = {"jacobian": jac, "hessian": hess, "neo_hookean_stress": neo_hookean_stress_error(seed=seed)}
    for kind, err in loss_gradient_errors(seed=seed).items():
        results[f"loss_gradient_{kind}"] = err
    return all(v < tol for v in results.values()), results


__all__ = ["spatial_derivative_errors", "loss_gradient_errors", "neo_hookean_stress_error", "run_all"]
