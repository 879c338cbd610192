"""Full-batch Adam warm-up followed by L-BFGS with a strong Wolfe line search."""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import LineSearchFailure, NonFiniteGradient, NonFiniteLoss, PreconditionViolation

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    n: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = None
    v: np.ndarray = None
    t: int = 0

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.n)
        if self.v is None:
            self.v = np.zeros(self.n)


def adam_step(state: AdamState, x, grad) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter vector."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.m.shape:
        raise ValueError("gradient length does not match the Adam state")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("non-finite entries in the gradient")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = state.m / (1.0 - state.beta1**state.t)
    vhat = state.v / (1.0 - state.beta2**state.t)
    return np.asarray(x, dtype=float) - state.lr * mhat / (np.sqrt(vhat) + state.eps)


@dataclass
class LbfgsState:
    m: int = 50
    c1: float = 1e-4
    c2: float = 0.9
    history: deque = field(default_factory=deque)
    iteration: int = 0
    skipped: int = 0

    def push(self, s, y) -> bool:
        """Store a curvature pair unless ``s.y <= 1e-12``."""
        sy = float(s @ y)
        if sy <= 1e-12:
            self.skipped += 1
            return False
        self.history.append((s, y, 1.0 / sy))
        while len(self.history) > self.m:
            self.history.popleft()
        return True


def lbfgs_direction(state: LbfgsState, grad) -> np.ndarray:
    """Two-loop recursion; steepest descent when the history is empty."""
    q = -np.asarray(grad, dtype=float)
    if not state.history:
        return q
    alphas = []
    for s, y, rho in reversed(state.history):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = state.history[-1]
    q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(state.history, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _cubic_min(x1, f1, g1, x2, f2, g2, lo, hi):
    """Minimiser of the cubic through two points with slopes, clipped to [lo, hi]."""
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    disc = d1 * d1 - g1 * g2
    if disc >= 0.0 and math.isfinite(disc):
        d2 = math.sqrt(disc)
        if x1 > x2:
            d2 = -d2
        denom = g2 - g1 + 2.0 * d2
        if denom != 0.0:
            t = x2 - (x2 - x1) * (g2 + d2 - d1) / denom
            if math.isfinite(t):
                return min(max(t, lo), hi)
    return 0.5 * (lo + hi)


@dataclass
class LineSearchResult:
    step: float
    x: np.ndarray
    f: float
    g: np.ndarray
    n_evals: int


def strong_wolfe_search(fun, x, d, f0, g0, c1=1e-4, c2=0.9, step0=1.0, max_evals=25) -> LineSearchResult:
    """Find a step satisfying the strong Wolfe conditions along ``d``.

    Bracketing with cubic extrapolation, then a cubic-interpolation zoom.
    ``fun(x)`` returns ``(f, grad)``.

    Raises
    ------
    PreconditionViolation
        If ``d`` is not a descent direction.
    LineSearchFailure
        After ``max_evals`` evaluations without an acceptable step.  The
        exception carries the best decreasing point seen as ``.best``.
    """
    dphi0 = float(g0 @ d)
    if not dphi0 < 0.0:
        raise PreconditionViolation(f"not a descent direction (g.d = {dphi0:.3e})")
    evals = 0
    best = None

    def phi(a):
        nonlocal evals, best
        evals += 1
        xa = x + a * d
        f, g = fun(xa)
        f = float(f)
        if not math.isfinite(f) or not np.all(np.isfinite(g)):
            return xa, math.inf, g, math.nan
        if f < f0 and (best is None or f < best.f):
            best = LineSearchResult(a, xa, f, g, evals)
        return xa, f, g, float(g @ d)

    def accept(a, xa, f, g):
        return LineSearchResult(a, xa, f, g, evals)

    def fail(msg):
        err = LineSearchFailure(msg)
        err.best = best
        err.n_evals = evals
        return err

    def zoom(a_lo, f_lo, dp_lo, a_hi, f_hi, dp_hi):
        stuck = False
        while evals < max_evals:
            lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
            width = hi - lo
            if width <= 1e-16 * max(1.0, hi):
                break
            if math.isfinite(f_hi) and math.isfinite(dp_hi):
                a = _cubic_min(a_lo, f_lo, dp_lo, a_hi, f_hi, dp_hi, lo, hi)
            else:
                a = 0.5 * (lo + hi)
            # a trial hugging a bracket end twice in a row is pushed inwards
            if min(a - lo, hi - a) < 0.1 * width:
                if stuck or a <= lo or a >= hi:
                    a = hi - 0.1 * width if abs(a - hi) < abs(a - lo) else lo + 0.1 * width
                    stuck = False
                else:
                    stuck = True
            else:
                stuck = False
            xa, f, g, dp = phi(a)
            if f > f0 + c1 * a * dphi0 or f >= f_lo:
                a_hi, f_hi, dp_hi = a, f, dp
            else:
                if abs(dp) <= -c2 * dphi0:
                    return accept(a, xa, f, g)
                if dp * (a_hi - a_lo) >= 0.0:
                    a_hi, f_hi, dp_hi = a_lo, f_lo, dp_lo
                a_lo, f_lo, dp_lo = a, f, dp
        raise fail("zoom did not satisfy the strong Wolfe conditions")

    a_prev, f_prev, dp_prev = 0.0, float(f0), dphi0
    a = float(step0)
    first = True
    while evals < max_evals:
        xa, f, g, dp = phi(a)
        if f > f0 + c1 * a * dphi0 or (not first and f >= f_prev):
            return zoom(a_prev, f_prev, dp_prev, a, f, dp)
        if abs(dp) <= -c2 * dphi0:
            return accept(a, xa, f, g)
        if dp >= 0.0:
            return zoom(a, f, dp, a_prev, f_prev, dp_prev)
        a_next = _cubic_min(a_prev, f_prev, dp_prev, a, f, dp, a + 0.01 * (a - a_prev), 10.0 * a)
        a_prev, f_prev, dp_prev = a, f, dp
        a = a_next
        first = False
    raise fail("bracketing phase exhausted its evaluations")


def wolfe_conditions_hold(f0, dphi0, step, f, dphi, c1, c2) -> tuple[bool, bool]:
    return f <= f0 + c1 * step * dphi0, abs(dphi) <= c2 * abs(dphi0)


@dataclass
class Schedule:
    adam_iters: int = 1000
    adam_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    lbfgs_iters: int = 2000
    history: int = 50
    c1: float = 1e-4
    c2: float = 0.9
    tol_grad: float = 1e-8
    tol_loss: float = 1e-9
    stall_window: int = 10


@dataclass
class TraceRow:
    step: int
    phase: str
    mse_g: float
    mse_u: float
    mse_t: float
    total: float
    grad_norm: float
    best: float


@dataclass
class LossTrace:
    rows: list = field(default_factory=list)
    status: str = "running"
    n_evals: int = 0
    wolfe_checks: list = field(default_factory=list)

    @property
    def totals(self) -> np.ndarray:
        return np.array([r.total for r in self.rows])

    @property
    def best(self) -> np.ndarray:
        return np.array([r.best for r in self.rows])

    def write_csv(self, path, header: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                for line in header.splitlines():
                    fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["step", "phase", "mse_g", "mse_u", "mse_t", "total", "grad_norm"])
            for r in self.rows:
                w.writerow([r.step, r.phase] + [repr(float(v)) for v in (r.mse_g, r.mse_u, r.mse_t, r.total, r.grad_norm)])


def minimize(loss_closure, x0, schedule: Schedule = Schedule(), callback=None):
    """Minimise ``loss_closure`` from ``x0``; returns ``(best_x, LossTrace)``.

    ``loss_closure(x)`` returns ``(loss, gradient)``.  A non-finite loss or
    gradient raises :class:`NonFiniteLoss` carrying ``x_last`` (the last
    finite iterate), ``x_best`` and the trace so far.  If it also exposes a
    ``last`` attribute with ``mse_g``/``mse_u``/``mse_t`` fields those are
    logged per iteration; otherwise the terms are recorded as NaN.
    """
    trace = LossTrace()
    evals = 0

    def evaluate(x):
        nonlocal evals
        evals += 1
        return loss_closure(x)

    def terms():
        br = getattr(loss_closure, "last", None)
        if br is None:
            return math.nan, math.nan, math.nan
        return br.mse_g, br.mse_u, br.mse_t

    x = np.array(x0, dtype=float)
    f, g = evaluate(x)
    f = float(f)
    if not math.isfinite(f):
        raise NonFiniteLoss("initial loss is not finite")
    best_x, best_f = x.copy(), f
    step = 0
    window = deque([f], maxlen=schedule.stall_window + 1)

    def record(phase, f, g):
        nonlocal step, best_x, best_f
        step += 1
        gn = float(np.linalg.norm(g))
        if f < best_f:
            best_f, best_x = f, x.copy()
        trace.rows.append(TraceRow(step, phase, *terms(), f, gn, best_f))
        if callback is not None:
            callback(trace.rows[-1])
        return gn

    def converged(f, g):
        if float(np.linalg.norm(g)) < schedule.tol_grad:
            trace.status = "gradient tolerance"
            return True
        window.append(f)
        if len(window) == window.maxlen:
            old = window[0]
            if (old - f) <= schedule.tol_loss * max(abs(old), 1e-300):
                trace.status = "stalled"
                return True
        return False

    if float(np.linalg.norm(g)) < schedule.tol_grad:
        trace.status = "gradient tolerance"
        trace.n_evals = evals
        return best_x, trace

    # Adam warm-up
    adam = AdamState(x.size, schedule.adam_lr, schedule.beta1, schedule.beta2, schedule.eps_adam)
    for _ in range(schedule.adam_iters):
        x_prev = x
        x = adam_step(adam, x, g)
        f, g = evaluate(x)
        f = float(f)
        if not math.isfinite(f) or not np.all(np.isfinite(g)):
            raise _nonfinite(trace, evals, x_prev, best_x)
        record("adam", f, g)
        if float(np.linalg.norm(g)) < schedule.tol_grad:
            trace.status = "gradient tolerance"
            trace.n_evals = evals
            return best_x, trace

    # L-BFGS needs the loss and gradient at the current point; after Adam that
    # is the last evaluation.
    window.clear()
    window.append(f)
    lb = LbfgsState(schedule.history, schedule.c1, schedule.c2)
    trace.status = "iteration limit"
    for _ in range(schedule.lbfgs_iters):
        d = lbfgs_direction(lb, g)
        dphi0 = float(g @ d)
        if not dphi0 < 0.0:
            lb.history.clear()
            d = -g
            dphi0 = float(g @ d)
        step0 = 1.0 if lb.history else min(1.0, 1.0 / max(float(np.linalg.norm(g)), 1e-300))
        try:
            res = strong_wolfe_search(evaluate, x, d, f, g, lb.c1, lb.c2, step0)
            ok = wolfe_conditions_hold(f, dphi0, res.step, res.f, float(res.g @ d), lb.c1, lb.c2)
            assert all(ok), "accepted step violates the strong Wolfe conditions"
            trace.wolfe_checks.append(ok)
        except LineSearchFailure as err:
            log.debug("line search failed: %s", err)
            res = _fallback(evaluate, x, g, f, err)
            lb.history.clear()
            if res is None:
                trace.status = "line search failure"
                break
        if not math.isfinite(res.f) or not np.all(np.isfinite(res.g)):
            raise _nonfinite(trace, evals, x, best_x)
        s = res.x - x
        yv = res.g - g
        lb.push(s, yv)
        lb.iteration += 1
        x, f, g = res.x, res.f, res.g
        record("lbfgs", f, g)
        if converged(f, g):
            break
    trace.n_evals = evals
    return best_x, trace


def _nonfinite(trace, evals, x_last, x_best):
    trace.status = "non-finite loss"
    trace.n_evals = evals
    err = NonFiniteLoss("loss or gradient became non-finite")
    err.x_last = x_last
    err.x_best = x_best
    err.trace = trace
    return err


def _fallback(evaluate, x, g, f, err):
    """Steepest-descent step of length ``min(1, 1/|g|)`` or the best point the search saw."""
    gn = float(np.linalg.norm(g))
    a = min(1.0, 1.0 / max(gn, 1e-300))
    xa = x - a * g
    fa, ga = evaluate(xa)
    if math.isfinite(fa) and fa < f:
        return LineSearchResult(a, xa, float(fa), ga, 1)
    best = getattr(err, "best", None)
    if best is not None and best.f < f:
        fb, gb = evaluate(best.x)  # refresh loss_closure.last for logging
        return LineSearchResult(best.step, best.x, float(fb), gb, 1)
    return None
