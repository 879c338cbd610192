"""Second-order spatial jets of the network and their parameter adjoints.

The spatial derivatives are pushed forward layer by layer as stacked arrays:
for a layer of width ``w`` and a batch of ``N`` points the value lives in a
``(w, N)`` array and the derivatives in a ``(w, K, N)`` array with ``K = 3``
first derivatives followed (for order 2) by the 6 independent second
derivatives in ``HESS_PAIRS`` order.  Parameter gradients of any scalar built
from the jets are then obtained with one reverse sweep over the recorded
layer operations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import EmptyTape
from .network import NetworkParams

HESS_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
_PAIR_INDEX = np.array([[0, 3, 4], [3, 1, 5], [4, 5, 2]])

_FUSED = _kernels.HAVE_NUMBA


def use_fused_kernels(flag: bool) -> bool:
    """Switch between the fused (numba) and plain numpy layer kernels.

    Returns the previous setting.  Both paths give the same results up to
    floating-point association.
    """
    global _FUSED
    prev = _FUSED
    _FUSED = bool(flag) and _kernels.HAVE_NUMBA
    return prev


@dataclass
class Jet2:
    """Network output at a batch of points with its spatial derivatives.

    ``value[n, i]`` is u_i, ``jacobian[n, i, j]`` is du_i/dX_j and
    ``hessian[n, i, j, k]`` is d2u_i/dX_j dX_k.  Lower-order jets leave the
    unused fields as ``None``.
    """

    value: np.ndarray
    jacobian: np.ndarray | None = None
    hessian: np.ndarray | None = None
    _record: "_JetRecord | None" = field(default=None, repr=False)


@dataclass
class _LayerNode:
    W: np.ndarray
    a_in: np.ndarray
    D_in: np.ndarray | None
    Dz: np.ndarray | None
    f: np.ndarray | None
    f1: np.ndarray | None
    f2: np.ndarray | None
    hidden: bool


@dataclass
class _JetRecord:
    order: int
    layers: list[_LayerNode]
    abar: np.ndarray | None = None
    Dbar: np.ndarray | None = None


class Tape:
    """Layer-granular record of forward jets and the adjoint seeds placed on them."""

    def __init__(self):
        self.params: NetworkParams | None = None
        self.records: list[_JetRecord] = []
        self.root: float | None = None

    @property
    def n_nodes(self) -> int:
        return sum(len(r.layers) for r in self.records)

    def _attach(self, params: NetworkParams, record: _JetRecord):
        if self.params is None:
            self.params = params
        elif self.params is not params:
            raise ValueError("all jets on one tape must share the same parameters")
        self.records.append(record)

    def seed(self, jet: Jet2, value=None, jacobian=None, hessian=None):
        """Accumulate d(root)/d(jet fields) onto a recorded jet.

        Arguments are adjoints with the same shapes as the corresponding
        ``Jet2`` fields; omitted ones are taken as zero.
        """
        rec = jet._record
        if rec is None or rec not in self.records:
            raise ValueError("jet was not recorded on this tape")
        n = jet.value.shape[0]
        if value is not None:
            abar = np.ascontiguousarray(np.asarray(value, dtype=float).T)
            rec.abar = abar if rec.abar is None else rec.abar + abar
        if rec.order == 0 or (jacobian is None and hessian is None):
            return
        K = 3 if rec.order == 1 else 9
        Dbar = np.zeros((3, K, n))
        if jacobian is not None:
            Dbar[:, :3, :] = np.transpose(jacobian, (1, 2, 0))
        if hessian is not None:
            if rec.order < 2:
                raise ValueError("hessian seed on a first-order jet")
            Dbar[:, 3:, :] = np.transpose(fold_hessian(hessian), (1, 2, 0))
        rec.Dbar = Dbar if rec.Dbar is None else rec.Dbar + Dbar

    def set_root(self, value: float):
        self.root = float(value)


def expand_hessian(hsym):
    """``(N, 3, 6)`` pair storage -> full ``(N, 3, 3, 3)``."""
    return hsym[..., _PAIR_INDEX]


def fold_hessian(hbar):
    """Adjoint of :func:`expand_hessian`: full ``(N, 3, 3, 3)`` -> ``(N, 3, 6)``."""
    out = np.empty(hbar.shape[:-2] + (6,))
    for p, (j, k) in enumerate(HESS_PAIRS):
        out[..., p] = hbar[..., j, k] if j == k else hbar[..., j, k] + hbar[..., k, j]
    return out


def _input_derivatives(order: int, n: int):
    if order == 0:
        return None
    K = 3 if order == 1 else 9
    D = np.zeros((3, K, n))
    for d in range(3):
        D[d, d, :] = 1.0
    return D


def forward_order2(params: NetworkParams, X, tape: Tape | None = None, order: int = 2) -> Jet2:
    """Evaluate the network and its spatial derivatives up to ``order``.

    ``X`` is a point ``(3,)`` or a batch ``(N, 3)``.  The value is computed by
    exactly the same operations as :func:`network.forward`, so the two agree
    bitwise.  When ``tape`` is given every layer operation is recorded for a
    later :func:`backward_params` sweep.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    a = X.reshape(-1, 3).T
    n = a.shape[1]
    D = _input_derivatives(order, n)
    keep = tape is not None
    nodes = []
    last = params.arch.n_layers - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = W @ a + b[:, None]
        Dz = None
        if D is not None:
            K = D.shape[1]
            Dz = (W @ D.reshape(D.shape[0], K * n)).reshape(W.shape[0], K, n)
        if l == last:
            node = _LayerNode(W, a, D, Dz, None, None, None, hidden=False)
            a, D = z, Dz
        else:
            f = np.tanh(z)
            if _FUSED:
                f1, f2, Dout = _kernels.jet_forward(f, Dz, order)
                node = _LayerNode(W, a, D, Dz, f, f1, f2, hidden=True)
                a, D = f, Dout
                if keep:
                    nodes.append(node)
                continue
            f1 = 1.0 - f * f
            f2 = None
            Dout = None
            if Dz is not None:
                Dout = np.empty_like(Dz)
                Dout[:, :3] = f1[:, None, :] * Dz[:, :3]
                if order == 2:
                    f2 = -2.0 * f * f1
                    J = Dz[:, :3]
                    for p, (j, k) in enumerate(HESS_PAIRS):
                        Dout[:, 3 + p] = f1 * Dz[:, 3 + p] + f2 * J[:, j] * J[:, k]
            node = _LayerNode(W, a, D, Dz, f, f1, f2, hidden=True)
            a, D = f, Dout
        if keep:
            nodes.append(node)

    value = a.T
    jac = hess = None
    if order >= 1:
        jac = np.transpose(D[:, :3, :], (2, 0, 1))
    if order == 2:
        hess = expand_hessian(np.transpose(D[:, 3:, :], (2, 0, 1)))
    jet = Jet2(value, jac, hess)
    if keep:
        rec = _JetRecord(order, nodes)
        tape._attach(params, rec)
        jet._record = rec
    if single:
        jet.value = jet.value[0]
        if jac is not None:
            jet.jacobian = jac[0]
        if hess is not None:
            jet.hessian = hess[0]
    return jet


def _backprop_record(rec: _JetRecord, scale: float, gW: list, gb: list):
    n = rec.layers[0].a_in.shape[1]
    abar = rec.abar if rec.abar is not None else np.zeros((3, n))
    Dbar = rec.Dbar
    if scale != 1.0:
        abar = abar * scale
        Dbar = None if Dbar is None else Dbar * scale
    for l in range(len(rec.layers) - 1, -1, -1):
        node = rec.layers[l]
        if node.hidden and _FUSED:
            zbar, Dzbar = _kernels.jet_backward(abar, Dbar, node.f, node.f1, node.f2, node.Dz, rec.order)
        elif node.hidden:
            f, f1, f2 = node.f, node.f1, node.f2
            zbar = abar * f1
            Dzbar = None
            if Dbar is not None:
                Dz = node.Dz
                Dzbar = f1[:, None, :] * Dbar
                f1bar = np.einsum("okn,okn->on", Dbar, Dz)
                zbar += f1bar * (-2.0 * f * f1)
                if rec.order == 2:
                    J = Dz[:, :3]
                    Hbar = Dbar[:, 3:]
                    g = f2[:, None, :] * Hbar
                    Dzbar[:, 0] += 2.0 * g[:, 0] * J[:, 0] + g[:, 3] * J[:, 1] + g[:, 4] * J[:, 2]
                    Dzbar[:, 1] += 2.0 * g[:, 1] * J[:, 1] + g[:, 3] * J[:, 0] + g[:, 5] * J[:, 2]
                    Dzbar[:, 2] += 2.0 * g[:, 2] * J[:, 2] + g[:, 4] * J[:, 0] + g[:, 5] * J[:, 1]
                    f2bar = (
                        Hbar[:, 0] * J[:, 0] * J[:, 0]
                        + Hbar[:, 1] * J[:, 1] * J[:, 1]
                        + Hbar[:, 2] * J[:, 2] * J[:, 2]
                        + Hbar[:, 3] * J[:, 0] * J[:, 1]
                        + Hbar[:, 4] * J[:, 0] * J[:, 2]
                        + Hbar[:, 5] * J[:, 1] * J[:, 2]
                    )
                    # d f2 / dz for tanh
                    zbar += f2bar * (f1 * (6.0 * f * f - 2.0))
        else:
            zbar, Dzbar = abar, Dbar
        W = node.W
        gb[l] += zbar.sum(axis=1)
        gW[l] += zbar @ node.a_in.T
        if Dzbar is not None:
            K = Dzbar.shape[1]
            gW[l] += Dzbar.reshape(W.shape[0], K * n) @ node.D_in.reshape(W.shape[1], K * n).T
        if l > 0:
            abar = W.T @ zbar
            if Dzbar is not None:
                K = Dzbar.shape[1]
                Dbar = (W.T @ Dzbar.reshape(W.shape[0], K * n)).reshape(W.shape[1], K, n)


def backward_params(tape: Tape, loss_seed: float = 1.0) -> np.ndarray:
    """Reverse sweep: gradient of the tape root w.r.t. every weight and bias.

    The result follows the flattening order of :func:`network.flatten`.
    """
    if tape.root is None or tape.params is None:
        raise EmptyTape("no scalar root recorded on the tape")
    params = tape.params
    gW = [np.zeros_like(W) for W in params.weights]
    gb = [np.zeros_like(b) for b in params.biases]
    for rec in reversed(tape.records):
        if rec.abar is None and rec.Dbar is None:
            continue
        _backprop_record(rec, loss_seed, gW, gb)
    parts = []
    for W, b in zip(gW, gb):
        parts.append(W.ravel())
        parts.append(b)
    return np.concatenate(parts)


def check_gradient(f, x, step: float = 1e-6, floor: float = 1e-12) -> float:
    """Max relative error between ``f``'s analytic gradient and central differences.

    ``f(x)`` must return ``(value, gradient)``.  Each component's error is
    normalised by ``max(|analytic|, |numeric|, floor)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    _, grad = f(x)
    grad = np.asarray(grad, dtype=float)
    worst = 0.0
    xp = x.copy()
    for i in range(x.size):
        xi = xp[i]
        xp[i] = xi + step
        fp = f(xp)[0]
        xp[i] = xi - step
        fm = f(xp)[0]
        xp[i] = xi
        num = (fp - fm) / (2.0 * step)
        denom = max(abs(grad[i]), abs(num), floor)
        worst = max(worst, abs(grad[i] - num) / denom)
    return worst
