"""Dense tanh network mapping reference coordinates to displacements."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LengthMismatch

CHECKPOINT_MAGIC = b"DCMNET1"
DEFAULT_WIDTHS = (3, 60, 60, 60, 60, 3)


@dataclass(frozen=True)
class NetworkArch:
    """Layer widths, input first and output last.

    Hidden layers always use tanh and the output layer is linear; the tags are
    kept so configs and checkpoints can state them explicitly.
    """

    layer_widths: tuple[int, ...] = DEFAULT_WIDTHS
    hidden_activation: str = "tanh"
    output_activation: str = "linear"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ValueError("architecture needs at least one hidden layer")
        if widths[0] != 3 or widths[-1] != 3:
            raise ValueError("input and output widths must both be 3")
        if any(w < 1 for w in widths):
            raise ValueError("layer widths must be positive")
        if self.hidden_activation != "tanh" or self.output_activation != "linear":
            raise ValueError("only tanh hidden / linear output layers are supported")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def shapes(self) -> list[tuple[int, int]]:
        w = self.layer_widths
        return [(w[i + 1], w[i]) for i in range(self.n_layers)]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.shapes)


@dataclass
class NetworkParams:
    arch: NetworkArch
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) != self.arch.n_layers or len(self.biases) != self.arch.n_layers:
            raise LengthMismatch("layer count does not match architecture")
        for (o, i), W, b in zip(self.arch.shapes, self.weights, self.biases):
            if W.shape != (o, i) or b.shape != (o,):
                raise LengthMismatch(f"expected W{(o, i)} b({o},), got W{W.shape} b{b.shape}")

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, [W.copy() for W in self.weights], [b.copy() for b in self.biases])


def init_params(arch: NetworkArch, seed: int) -> NetworkParams:
    """Glorot-uniform weights, zero biases, reproducible per seed."""
    rng = np.random.Generator(np.random.Philox(seed))
    weights, biases = [], []
    for fan_out, fan_in in arch.shapes:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(arch, weights, biases)


def forward(params: NetworkParams, X) -> np.ndarray:
    """Plain forward pass for one point ``(3,)`` or a batch ``(N, 3)``."""
    X = np.asarray(X, dtype=float)
    a = X.reshape(-1, 3).T
    last = params.arch.n_layers - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = W @ a + b[:, None]
        a = z if l == last else np.tanh(z)
    out = a.T
    return out[0] if X.ndim == 1 else out


def flatten(params: NetworkParams) -> np.ndarray:
    """Layers ascending; within a layer the row-major weights, then the biases."""
    parts = []
    for W, b in zip(params.weights, params.biases):
        parts.append(W.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten(arch: NetworkArch, vector) -> NetworkParams:
    vector = np.asarray(vector, dtype=float)
    if vector.ndim != 1 or vector.size != arch.n_params:
        raise LengthMismatch(f"expected {arch.n_params} parameters, got {vector.size}")
    weights, biases = [], []
    pos = 0
    for o, i in arch.shapes:
        weights.append(vector[pos:pos + o * i].reshape(o, i).copy())
        pos += o * i
        biases.append(vector[pos:pos + o].copy())
        pos += o
    return NetworkParams(arch, weights, biases)


def save_checkpoint(params: NetworkParams, path) -> None:
    """Write ``DCMNET1`` + uint32 layer count + uint32 widths + float64 params (all LE)."""
    widths = params.arch.layer_widths
    header = CHECKPOINT_MAGIC + struct.pack(f"<I{len(widths)}I", len(widths), *widths)
    Path(path).write_bytes(header + flatten(params).astype("<f8").tobytes())


def load_checkpoint(path) -> NetworkParams:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a DCMNET1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    widths = struct.unpack_from(f"<{count}I", raw, pos)
    pos += 4 * count
    arch = NetworkArch(tuple(widths))
    vector = np.frombuffer(raw, dtype="<f8", offset=pos)
    return unflatten(arch, vector.astype(float))
