"""Strong-form collocation loss and its exact parameter gradient."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autodiff import Jet2, Tape, backward_params, forward_order2
from .errors import EmptySet, NonPositiveJacobian
from .geometry import CollocationSet
from .materials import PlasticPointState
from .network import NetworkParams, unflatten

DEFAULT_CHUNK = 2048


@dataclass(frozen=True)
class PenaltyWeights:
    lam_u: float = 1.0
    lam_t: float = 1.0

    def __post_init__(self):
        if self.lam_u < 0 or self.lam_t < 0:
            raise ValueError("penalty weights must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    mse_g: float
    mse_u: float
    mse_t: float
    weights: PenaltyWeights = PenaltyWeights()
    n_inverted: int = 0

    @property
    def total(self) -> float:
        return self.mse_g + self.weights.lam_u * self.mse_u + self.weights.lam_t * self.mse_t


def _check_finite_strain(invalid):
    if invalid is not None and np.any(invalid):
        raise NonPositiveJacobian(f"{int(np.sum(invalid))} points with det(F) <= 1e-10")


def interior_residual(jet: Jet2, model, state: PlasticPointState | None = None, body_force=None, X=None):
    """Pointwise ``div(stress) + b`` at the points of an order-2 jet."""
    G = np.atleast_3d(jet.jacobian).reshape(-1, 3, 3)
    H = np.asarray(jet.hessian).reshape(-1, 3, 3, 3)
    if state is not None:
        r, _, invalid = model.divergence(G, H, state)
    else:
        r, _, invalid = model.divergence(G, H)
    _check_finite_strain(invalid)
    if body_force is not None:
        r = r + np.asarray(body_force(np.asarray(X).reshape(-1, 3)) if callable(body_force) else body_force)
    return r.reshape(np.shape(jet.value))


def _chunks(n: int, size: int):
    return [(a, min(a + size, n)) for a in range(0, n, size)]


class CollocationLoss:
    """Callable ``flat_params -> (total, gradient)`` over a fixed collocation set.

    For the plastic model ``states`` holds the committed history at the
    interior points and at the traction points, in collocation order.  Points
    where a finite-strain model sees ``det F <= 1e-10`` contribute a constant
    residual of magnitude ``barrier`` and no gradient.

    ``scale`` is a characteristic displacement ``s``: the network output is
    read as ``u / s`` and every loss term is divided by ``s**2``, so fields of
    any magnitude train in O(1) units.  ``scale=1`` is the plain formulation.
    """

    def __init__(
        self,
        arch,
        colloc: CollocationSet,
        model,
        weights: PenaltyWeights = PenaltyWeights(),
        body_force=None,
        states: tuple[PlasticPointState, PlasticPointState] | None = None,
        chunk_size: int = DEFAULT_CHUNK,
        threads: int = 1,
        barrier: float = 1e3,
        scale: float = 1.0,
    ):
        if not scale > 0:
            raise ValueError("displacement scale must be positive")
        n_g, n_u, n_t = colloc.counts
        if min(n_g, n_u, n_t) == 0:
            raise EmptySet(f"collocation set has an empty point class (N_G, N_u, N_t) = {(n_g, n_u, n_t)}")
        if getattr(model, "name", "") == "j2plastic" and states is None:
            raise ValueError("the plastic model needs committed states for interior and traction points")
        self.arch = arch
        self.colloc = colloc
        self.model = model
        self.weights = weights
        self.body_force = body_force
        self.states = states
        self.chunk_size = int(chunk_size)
        self.threads = max(1, int(threads))
        self.barrier = float(barrier)
        self.scale = float(scale)
        self.last: LossBreakdown | None = None
        self.n_evals = 0
        self._body = None
        if body_force is not None:
            self._body = np.asarray(body_force(colloc.interior), dtype=float)

    # -- per-chunk jobs -------------------------------------------------------

    def _interior(self, params, a, b):
        c = self.colloc
        n_g = len(c.interior)
        tape = Tape()
        jet = forward_order2(params, c.interior[a:b], tape, order=2)
        s = self.scale
        G = jet.jacobian * s
        H = jet.hessian * s
        if self.states is not None:
            r, vjp, invalid = self.model.divergence(G, H, self.states[0].take(slice(a, b)))
        else:
            r, vjp, invalid = self.model.divergence(G, H)
        if self._body is not None:
            r = r + self._body[a:b]
        sq = np.sum(r * r, axis=1) / (s * s)
        v = (2.0 / (n_g * s * s)) * r
        n_bad = 0
        if invalid is not None and np.any(invalid):
            sq = np.where(invalid, self.barrier**2, sq)
            v = np.where(invalid[:, None], 0.0, v)
            n_bad = int(invalid.sum())
        Gbar, Hbar = vjp(v)
        tape.seed(jet, jacobian=Gbar * s, hessian=Hbar * s)
        tape.set_root(float(np.sum(sq)) / n_g)
        return sq, backward_params(tape), n_bad

    def _essential(self, params, a, b):
        c = self.colloc
        n_u = len(c.essential_points)
        tape = Tape()
        jet = forward_order2(params, c.essential_points[a:b], tape, order=0)
        s = self.scale
        err = (jet.value - c.essential_targets[a:b] / s) * c.essential_masks[a:b]
        sq = np.sum(err * err, axis=1)
        tape.seed(jet, value=(2.0 * self.weights.lam_u / n_u) * err)
        tape.set_root(self.weights.lam_u * float(np.sum(sq)) / n_u)
        return sq, backward_params(tape), 0

    def _traction(self, params, a, b):
        c = self.colloc
        n_t = len(c.traction_points)
        tape = Tape()
        jet = forward_order2(params, c.traction_points[a:b], tape, order=1)
        s = self.scale
        G = jet.jacobian * s
        if self.states is not None:
            sigma, vjp, invalid = self.model.stress(G, self.states[1].take(slice(a, b)))
        else:
            sigma, vjp, invalid = self.model.stress(G)
        normals = c.traction_normals[a:b]
        err = np.einsum("nij,nj->ni", sigma, normals) - c.traction_targets[a:b]
        sq = np.sum(err * err, axis=1) / (s * s)
        ebar = (2.0 * self.weights.lam_t / (n_t * s * s)) * err
        n_bad = 0
        if invalid is not None and np.any(invalid):
            sq = np.where(invalid, self.barrier**2, sq)
            ebar = np.where(invalid[:, None], 0.0, ebar)
            n_bad = int(invalid.sum())
        Gbar = vjp(ebar[:, :, None] * normals[:, None, :])
        tape.seed(jet, jacobian=Gbar * s)
        tape.set_root(self.weights.lam_t * float(np.sum(sq)) / n_t)
        return sq, backward_params(tape), n_bad

    # -- public ---------------------------------------------------------------

    def evaluate(self, params: NetworkParams) -> tuple[LossBreakdown, np.ndarray]:
        c = self.colloc
        jobs = []
        for kind, n in (("g", len(c.interior)), ("u", len(c.essential_points)), ("t", len(c.traction_points))):
            fn = {"g": self._interior, "u": self._essential, "t": self._traction}[kind]
            jobs += [(kind, fn, a, b) for a, b in _chunks(n, self.chunk_size)]

        if self.threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                results = list(pool.map(lambda j: j[1](params, j[2], j[3]), jobs))
        else:
            results = [fn(params, a, b) for _, fn, a, b in jobs]

        sq = {"g": [], "u": [], "t": []}
        grad = np.zeros(self.arch.n_params)
        n_bad = 0
        for (kind, *_), (s, g, bad) in zip(jobs, results):
            sq[kind].append(s)
            grad += g
            n_bad += bad
        mse = {k: math.fsum(np.concatenate(v).tolist()) / sum(len(x) for x in v) for k, v in sq.items()}
        self.n_evals += 1
        br = LossBreakdown(mse["g"], mse["u"], mse["t"], self.weights, n_bad)
        self.last = br
        return br, grad

    def __call__(self, flat) -> tuple[float, np.ndarray]:
        br, grad = self.evaluate(unflatten(self.arch, flat))
        return br.total, grad


def assemble_loss(
    params: NetworkParams,
    colloc: CollocationSet,
    model,
    weights: PenaltyWeights = PenaltyWeights(),
    states=None,
    body_force=None,
    **kw,
) -> tuple[LossBreakdown, np.ndarray]:
    """One-shot loss evaluation; see :class:`CollocationLoss`."""
    loss = CollocationLoss(params.arch, colloc, model, weights, body_force=body_force, states=states, **kw)
    return loss.evaluate(params)
