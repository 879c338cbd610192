"""Problem set-up, training drivers per material model, and verification metrics."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import smalltensor as st
from .autodiff import forward_order2
from .errors import UnrecoverableInversion, ZeroReference
from .geometry import FACES, BoundarySpec, BoxDomain, CollocationSet, Essential, Traction, build_collocation_set, cantilever_bcs, sample_interior
from .loss import CollocationLoss, PenaltyWeights
from .materials import (
    J2PlasticModel,
    MaterialConstants,
    PlasticPointState,
    linear_elastic_stress,
    make_model,
    von_mises_stress,
)
from .network import NetworkArch, NetworkParams, flatten, init_params, unflatten
from .optim import LossTrace, Schedule, minimize

log = logging.getLogger(__name__)

MODEL_KINDS = ("elastic", "neohookean", "j2plastic")
INVERSION_LIMIT = 0.10


@dataclass
class ProblemSpec:
    """Everything needed to train one boundary value problem.

    Prescribed displacements and tractions in ``bcs`` are the full-load
    values; pseudo-time step ``t`` of ``steps`` applies them scaled by
    ``load_factors[t-1]`` (uniform ``t/steps`` by default).
    """

    model: str = "elastic"
    mats: MaterialConstants = field(default_factory=lambda: MaterialConstants.from_young(1.0, 0.3))
    box: BoxDomain = field(default_factory=BoxDomain)
    bcs: BoundarySpec | None = None
    C: float = 0.25
    arch: NetworkArch = field(default_factory=NetworkArch)
    n_interior: int = 7500
    n_essential: int = 4000
    n_traction: int = 4000
    seed: int = 0
    weights: PenaltyWeights = field(default_factory=PenaltyWeights)
    schedule: Schedule = field(default_factory=Schedule)
    step_schedule: Schedule | None = None
    steps: int = 1
    load_factors: tuple | None = None
    step_loss_tol: float | None = None
    body_force: Callable | None = None
    threads: int = 1
    barrier: float = 1e3
    displacement_scale: float | None = None

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model!r}; expected one of {MODEL_KINDS}")
        if self.bcs is None:
            self.bcs = cantilever_bcs(self.C)
        if self.steps < 1:
            raise ValueError("the number of pseudo-time steps must be >= 1")
        factors = self.factors()
        if len(factors) != self.steps:
            raise ValueError("load_factors must have one entry per pseudo-time step")
        if np.any(np.diff(np.abs(factors)) < 0):
            raise ValueError("the load path must be nondecreasing in magnitude")

    def scale_for(self, colloc: CollocationSet) -> float:
        """Characteristic displacement; defaults to the largest prescribed one (1 if none)."""
        if self.displacement_scale is not None:
            return float(self.displacement_scale)
        peak = float(np.max(np.abs(colloc.essential_targets * colloc.essential_masks), initial=0.0))
        return peak if peak > 0.0 else 1.0

    def factors(self) -> np.ndarray:
        if self.load_factors is not None:
            return np.asarray(self.load_factors, dtype=float)
        return np.arange(1, self.steps + 1) / self.steps


def scale_loads(colloc: CollocationSet, factor: float) -> CollocationSet:
    """Collocation set with every prescribed displacement and traction scaled."""
    return dataclasses.replace(
        colloc,
        essential_targets=colloc.essential_targets * factor,
        traction_targets=colloc.traction_targets * factor,
    )


@dataclass
class SolutionField:
    """Trained network plus what is needed to evaluate derived fields anywhere.

    For the plastic model ``history`` holds the optimised parameters of every
    pseudo-time step up to this one; the plastic state at arbitrary points is
    obtained by replaying the return map along that sequence, which at the
    collocation points reproduces the committed state exactly.
    """

    params: NetworkParams
    model: str
    mats: MaterialConstants
    trace: LossTrace | None = None
    history: list = field(default_factory=list)
    states: tuple | None = None
    step: int = 1
    load_factor: float = 1.0
    report: dict = field(default_factory=dict)
    scale: float = 1.0

    def _gradient(self, params, pts):
        return forward_order2(params, pts, order=1).jacobian * self.scale

    def displacement(self, points) -> np.ndarray:
        return forward_order2(self.params, np.asarray(points, dtype=float).reshape(-1, 3), order=0).value * self.scale

    def plastic_state(self, points) -> PlasticPointState:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        state = PlasticPointState.virgin(len(pts))
        model = J2PlasticModel(self.mats, state)
        for p in self.history:
            _, state = model.commit(self._gradient(p, pts), state)
        return state

    def evaluate(self, points) -> dict:
        """Displacement, its gradient, strain or F, stress, von Mises and plastic state."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        jet = forward_order2(self.params, pts, order=1)
        G = jet.jacobian * self.scale
        out = {"u": jet.value * self.scale, "grad_u": G}
        if self.model == "elastic":
            eps = st.sym(G)
            sigma = linear_elastic_stress(eps, self.mats)
            out.update(strain=eps, stress=sigma, vm=von_mises_stress(sigma))
        elif self.model == "neohookean":
            F = np.eye(3) + G
            J = st.determinant(F)
            out.update(F=F, J=J)
            ok = J > 1e-10
            P = np.full_like(F, np.nan)
            sig = np.full_like(F, np.nan)
            if np.any(ok):
                model = make_model("neohookean", self.mats)
                P[ok] = model.stress(G[ok])[0]
                sig[ok] = np.einsum("nij,nkj->nik", P[ok], F[ok]) / J[ok, None, None]
            out.update(stress=P, cauchy=sig, vm=von_mises_stress(sig))
        else:
            prev = PlasticPointState.virgin(len(pts))
            model = J2PlasticModel(self.mats, prev)
            for p in self.history[:-1]:
                _, prev = model.commit(self._gradient(p, pts), prev)
            sigma, state = model.commit(G, prev)
            out.update(strain=st.sym(G), stress=sigma, vm=von_mises_stress(sigma), state=state)
        return out


def _make_loss(spec: ProblemSpec, colloc, model, scale, states=None):
    return CollocationLoss(
        spec.arch,
        colloc,
        model,
        spec.weights,
        body_force=spec.body_force,
        states=states,
        threads=spec.threads,
        barrier=spec.barrier,
        scale=scale,
    )


def _train(spec: ProblemSpec, colloc, model, x0, schedule, scale, states=None):
    loss = _make_loss(spec, colloc, model, scale, states)
    x, trace = minimize(loss, x0, schedule)
    # one more evaluation at the returned point so the breakdown matches it
    br, _ = loss.evaluate(unflatten(spec.arch, x))
    return x, trace, br


def _breakdown_dict(br) -> dict:
    return {
        "mse_g": br.mse_g,
        "mse_u": br.mse_u,
        "mse_t": br.mse_t,
        "total": br.total,
        "n_inverted": br.n_inverted,
    }


def _trace_summary(trace: LossTrace) -> dict:
    t = trace.totals
    return {
        "iterations": len(trace.rows),
        "evaluations": trace.n_evals,
        "status": trace.status,
        "first_total": float(t[0]) if len(t) else None,
        "best_total": float(trace.rows[-1].best) if trace.rows else None,
    }


def _initial_loss(spec: ProblemSpec, colloc, model, x0, scale, states=None):
    return _make_loss(spec, colloc, model, scale, states).evaluate(unflatten(spec.arch, x0))[0].total


def build_problem(spec: ProblemSpec) -> CollocationSet:
    return build_collocation_set(spec.box, spec.bcs, spec.n_interior, spec.n_essential, spec.n_traction, spec.seed)


def solve_elastic(spec: ProblemSpec, colloc: CollocationSet | None = None) -> SolutionField:
    """Single optimisation run for small-strain linear elasticity."""
    if spec.model != "elastic":
        raise ValueError("solve_elastic needs model kind 'elastic'")
    return _solve_single(spec, colloc)


def solve_hyperelastic(spec: ProblemSpec, colloc: CollocationSet | None = None) -> SolutionField:
    """Single-step neo-Hookean solve.

    Inverted points are tolerated while training (they carry a constant
    barrier residual) but more than 10% of interior points with ``det F <= 0``
    at the end raises :class:`UnrecoverableInversion`.
    """
    if spec.model != "neohookean":
        raise ValueError("solve_hyperelastic needs model kind 'neohookean'")
    sol = _solve_single(spec, colloc)
    colloc = colloc if colloc is not None else build_problem(spec)
    J = st.determinant(np.eye(3) + sol._gradient(sol.params, colloc.interior))
    n_bad = int(np.sum(J <= 1e-10))
    sol.report["interior_inverted"] = n_bad
    sol.report["min_det_F"] = float(J.min())
    if n_bad > INVERSION_LIMIT * len(J):
        raise UnrecoverableInversion(f"{n_bad} of {len(J)} interior points remain inverted")
    return sol


def _solve_single(spec: ProblemSpec, colloc):
    t0 = time.perf_counter()
    colloc = colloc if colloc is not None else build_problem(spec)
    colloc = scale_loads(colloc, spec.factors()[-1]) if spec.steps == 1 and spec.factors()[-1] != 1.0 else colloc
    model = make_model(spec.model, spec.mats)
    scale = spec.scale_for(colloc)
    x0 = flatten(init_params(spec.arch, spec.seed))
    f0 = _initial_loss(spec, colloc, model, x0, scale)
    x, trace, br = _train(spec, colloc, model, x0, spec.schedule, scale)
    params = unflatten(spec.arch, x)
    report = {
        "model": spec.model,
        "seed": spec.seed,
        "displacement_scale": scale,
        "initial_total": f0,
        "final": _breakdown_dict(br),
        "trace": _trace_summary(trace),
        "wall_time_s": time.perf_counter() - t0,
    }
    return SolutionField(params, spec.model, spec.mats, trace, history=[params], report=report, scale=scale)


def solve_plastic(spec: ProblemSpec, colloc: CollocationSet | None = None, callback=None) -> list[SolutionField]:
    """Pseudo-time stepping for J2 plasticity with weight transfer between steps.

    Each step trains against the state committed at the end of the previous
    step, starting from the parameters that step ended with; the state is then
    committed once at the interior and traction points.
    """
    if spec.model != "j2plastic":
        raise ValueError("solve_plastic needs model kind 'j2plastic'")
    colloc = colloc if colloc is not None else build_problem(spec)
    n_g, _, n_t = colloc.counts
    states = (PlasticPointState.virgin(n_g), PlasticPointState.virgin(n_t))
    scale = spec.scale_for(colloc)
    x = flatten(init_params(spec.arch, spec.seed))
    history: list[NetworkParams] = []
    out = []
    for t, factor in enumerate(spec.factors(), start=1):
        t0 = time.perf_counter()
        step_colloc = scale_loads(colloc, factor)
        model = J2PlasticModel(spec.mats, states[0])
        schedule = spec.schedule if t == 1 or spec.step_schedule is None else spec.step_schedule
        f0 = _initial_loss(spec, step_colloc, model, x, scale, states)
        x, trace, br = _train(spec, step_colloc, model, x, schedule, scale, states=states)
        params = unflatten(spec.arch, x)
        history.append(params)
        G_int = forward_order2(params, colloc.interior, order=1).jacobian * scale
        G_tr = forward_order2(params, colloc.traction_points, order=1).jacobian * scale
        _, s_int = model.commit(G_int, states[0])
        _, s_tr = model.commit(G_tr, states[1])
        states = (s_int, s_tr)
        flagged = spec.step_loss_tol is not None and br.total > spec.step_loss_tol
        if flagged:
            log.warning("step %d ended with loss %.3e above tolerance %.3e", t, br.total, spec.step_loss_tol)
        report = {
            "model": spec.model,
            "seed": spec.seed,
            "step": t,
            "displacement_scale": scale,
            "load_factor": float(factor),
            "initial_total": f0,
            "final": _breakdown_dict(br),
            "trace": _trace_summary(trace),
            "above_tolerance": flagged,
            "plastic_points": int(np.sum(s_int.alpha > 0)),
            "max_alpha": float(np.max(s_int.alpha)),
            "wall_time_s": time.perf_counter() - t0,
        }
        sol = SolutionField(params, spec.model, spec.mats, trace, list(history), states, t, float(factor), report, scale)
        out.append(sol)
        if callback is not None:
            callback(sol)
    return out


def solve(spec: ProblemSpec, colloc: CollocationSet | None = None) -> list[SolutionField]:
    """Dispatch on the model kind; always returns the list of step solutions."""
    if spec.model == "elastic":
        return [solve_elastic(spec, colloc)]
    if spec.model == "neohookean":
        return [solve_hyperelastic(spec, colloc)]
    return solve_plastic(spec, colloc)


def l2_error(u_ref, u_hat) -> float:
    """``||u_ref - u_hat|| / ||u_ref||`` over all stacked components."""
    u_ref = np.asarray(u_ref, dtype=float)
    u_hat = np.asarray(u_hat, dtype=float)
    if u_ref.shape != u_hat.shape:
        raise ValueError(f"shape mismatch {u_ref.shape} vs {u_hat.shape}")
    if u_ref.size == 0:
        raise ValueError("need at least one point")
    ref = float(np.linalg.norm(u_ref))
    if ref == 0.0:
        raise ZeroReference("reference field has zero norm")
    return float(np.linalg.norm(u_ref - u_hat)) / ref


# ---------------------------------------------------------------------------
# manufactured solutions


@dataclass
class ManufacturedField:
    """Exact displacement with its gradient and Hessian ``H[n, i, j, k]``."""

    name: str
    u: Callable
    grad: Callable
    hess: Callable


def linear_body_force(field_: ManufacturedField, mats: MaterialConstants) -> Callable:
    """``b = -(mu lap u + (lam + mu) grad div u)`` for small-strain elasticity."""

    def b(X):
        H = field_.hess(np.asarray(X, dtype=float).reshape(-1, 3))
        lap = np.einsum("nijj->ni", H)
        grad_div = np.einsum("njji->ni", H)
        return -(mats.mu * lap + (mats.lam + mats.mu) * grad_div)

    return b


def affine_field(A, c=(0.0, 0.0, 0.0)) -> ManufacturedField:
    A = np.asarray(A, dtype=float)
    c = np.asarray(c, dtype=float)
    return ManufacturedField(
        "affine",
        lambda X: np.asarray(X).reshape(-1, 3) @ A.T + c,
        lambda X: np.broadcast_to(A, (len(np.asarray(X).reshape(-1, 3)), 3, 3)).copy(),
        lambda X: np.zeros((len(np.asarray(X).reshape(-1, 3)), 3, 3, 3)),
    )


def quadratic_field(amplitude: float = 1e-2) -> ManufacturedField:
    """``u = (a x^2, 0, 0)``."""

    def u(X):
        X = np.asarray(X).reshape(-1, 3)
        out = np.zeros_like(X)
        out[:, 0] = amplitude * X[:, 0] ** 2
        return out

    def grad(X):
        X = np.asarray(X).reshape(-1, 3)
        G = np.zeros((len(X), 3, 3))
        G[:, 0, 0] = 2.0 * amplitude * X[:, 0]
        return G

    def hess(X):
        H = np.zeros((len(np.asarray(X).reshape(-1, 3)), 3, 3, 3))
        H[:, 0, 0, 0] = 2.0 * amplitude
        return H

    return ManufacturedField("quadratic", u, grad, hess)


def trigonometric_field(box: BoxDomain, amplitude: float = 1e-2) -> ManufacturedField:
    """``u = a (sin(px) cos(qy), sin(px) sin(rz), cos(qy) sin(rz))``.

    ``p = pi/L``, ``q = pi/H``, ``r = pi/D``.
    """
    p, q, r = math.pi / box.L, math.pi / box.H, math.pi / box.D

    def parts(X):
        X = np.asarray(X, dtype=float).reshape(-1, 3)
        return (np.sin(p * X[:, 0]), np.cos(p * X[:, 0]), np.sin(q * X[:, 1]), np.cos(q * X[:, 1]),
                np.sin(r * X[:, 2]), np.cos(r * X[:, 2]))

    def u(X):
        sx, _, _, cy, sz, _ = parts(X)
        return amplitude * np.stack([sx * cy, sx * sz, cy * sz], axis=1)

    def grad(X):
        sx, cx, sy, cy, sz, cz = parts(X)
        G = np.zeros((len(sx), 3, 3))
        G[:, 0, 0] = p * cx * cy
        G[:, 0, 1] = -q * sx * sy
        G[:, 1, 0] = p * cx * sz
        G[:, 1, 2] = r * sx * cz
        G[:, 2, 1] = -q * sy * sz
        G[:, 2, 2] = r * cy * cz
        return amplitude * G

    def hess(X):
        sx, cx, sy, cy, sz, cz = parts(X)
        H = np.zeros((len(sx), 3, 3, 3))
        H[:, 0, 0, 0] = -p * p * sx * cy
        H[:, 0, 0, 1] = H[:, 0, 1, 0] = -p * q * cx * sy
        H[:, 0, 1, 1] = -q * q * sx * cy
        H[:, 1, 0, 0] = -p * p * sx * sz
        H[:, 1, 0, 2] = H[:, 1, 2, 0] = p * r * cx * cz
        H[:, 1, 2, 2] = -r * r * sx * sz
        H[:, 2, 1, 1] = -q * q * cy * sz
        H[:, 2, 1, 2] = H[:, 2, 2, 1] = -q * r * sy * cz
        H[:, 2, 2, 2] = -r * r * cy * sz
        return amplitude * H

    return ManufacturedField("trigonometric", u, grad, hess)


def manufactured_bcs(
    field_: ManufacturedField, mats: MaterialConstants, traction_faces: tuple = ("z1",)
) -> BoundarySpec:
    """Exact small-strain tractions on ``traction_faces``, exact displacements elsewhere."""

    def traction(points, normal):
        sigma = linear_elastic_stress(st.sym(field_.grad(points)), mats)
        return sigma @ normal

    faces = {}
    for f in FACES:
        faces[f] = Traction(traction) if f in traction_faces else Essential(field_.u)
    return BoundarySpec(faces)


def mms_verify(
    field_: ManufacturedField,
    mats: MaterialConstants,
    box: BoxDomain = BoxDomain(),
    counts: tuple = (2000, 1000, 1000),
    seed: int = 0,
    arch: NetworkArch = NetworkArch((3, 30, 30, 30, 3)),
    schedule: Schedule = Schedule(),
    body_force: Callable | None = None,
    n_test: int = 1000,
    test_seed: int | None = None,
) -> dict:
    """Train against a manufactured small-strain field and measure the L2 error.

    The body force defaults to the one implied by the field's Hessian.  Test
    points are interior samples drawn from ``test_seed`` (default
    ``seed + 1``) and never coincide with training points.
    """
    body = body_force if body_force is not None else linear_body_force(field_, mats)
    spec = ProblemSpec(
        model="elastic",
        mats=mats,
        box=box,
        bcs=manufactured_bcs(field_, mats),
        arch=arch,
        n_interior=counts[0],
        n_essential=counts[1],
        n_traction=counts[2],
        seed=seed,
        schedule=schedule,
        body_force=body,
    )
    colloc = build_problem(spec)
    sol = solve_elastic(spec, colloc)
    test_seed = seed + 1 if test_seed is None else test_seed
    if test_seed == seed:
        raise ValueError("test points must come from a seed different from the training seed")
    X = sample_interior(box, n_test, test_seed)
    train = {tuple(p) for p in colloc.interior}
    X = X[[tuple(p) not in train for p in X]]
    err = l2_error(field_.u(X), sol.displacement(X))
    return {"field": field_.name, "l2_error": err, "n_test": len(X), "trace": sol.trace, "report": sol.report}
