"""Small feed-forward networks stored layer by layer as flat vectors.

Layer ``p`` of a :data:`LayeredParams` holds the ``d_p x d_{p-1}`` weight
matrix in row-major order followed, when bias is enabled, by the ``d_p``
bias entries.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractViolation, NumericalFailure

LayeredParams = list[np.ndarray]

ACTIVATIONS = ("relu", "tanh", "identity")
MAX_LAYERS = 16


@dataclass(frozen=True)
class Architecture:
    layer_dims: tuple[int, ...]
    activation: str = "relu"
    bias: bool = False

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ContractViolation("an architecture needs at least one layer (two dims)")
        if len(dims) - 1 > MAX_LAYERS:
            raise ContractViolation(f"at most {MAX_LAYERS} layers are supported")
        if any(d < 1 for d in dims):
            raise ContractViolation(f"layer dims must be positive, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ContractViolation(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    def layer_shape(self, p: int) -> tuple[int, int]:
        return self.layer_dims[p + 1], self.layer_dims[p]

    def layer_size(self, p: int) -> int:
        rows, cols = self.layer_shape(p)
        return rows * cols + (rows if self.bias else 0)

    def layer_sizes(self) -> list[int]:
        return [self.layer_size(p) for p in range(self.num_layers)]


@dataclass(frozen=True, eq=False)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ContractViolation(f"batch inputs must be a non-empty B x d matrix, got {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ContractViolation("labels must be a vector with one entry per input row")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def split_layer(arch: Architecture, p: int, flat: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    rows, cols = arch.layer_shape(p)
    if flat.shape != (arch.layer_size(p),):
        raise ContractViolation(f"layer {p} has length {flat.shape}, expected {arch.layer_size(p)}")
    weight = flat[: rows * cols].reshape(rows, cols)
    bias = flat[rows * cols :] if arch.bias else None
    return weight, bias


def check_params(arch: Architecture, params: Sequence[np.ndarray]) -> None:
    if len(params) != arch.num_layers:
        raise ContractViolation(f"expected {arch.num_layers} layers, got {len(params)}")
    for p, layer in enumerate(params):
        if np.shape(layer) != (arch.layer_size(p),):
            raise ContractViolation(f"layer {p} has shape {np.shape(layer)}, expected ({arch.layer_size(p)},)")


def init_params(arch: Architecture, seed: int) -> LayeredParams:
    """Zero-mean Gaussian weights scaled by ``1/sqrt(fan_in)``; biases start at zero.

    ReLU nets use the He gain ``sqrt(2)``, other activations the Xavier-style gain 1.
    """
    rng = np.random.default_rng(seed)
    gain = np.sqrt(2.0) if arch.activation == "relu" else 1.0
    params = []
    for p in range(arch.num_layers):
        rows, cols = arch.layer_shape(p)
        weight = rng.standard_normal((rows, cols)) * gain / np.sqrt(cols)
        parts = [weight.ravel()]
        if arch.bias:
            parts.append(np.zeros(rows))
        params.append(np.concatenate(parts))
    return params


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def _forward_cache(arch: Architecture, params: Sequence[np.ndarray], x: np.ndarray):
    check_params(arch, params)
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != arch.layer_dims[0]:
        raise ContractViolation(f"inputs must be B x {arch.layer_dims[0]}, got {x.shape}")
    acts = [x]
    pre = []
    h = x
    for p, flat in enumerate(params):
        weight, bias = split_layer(arch, p, flat)
        z = h @ weight.T
        if bias is not None:
            z = z + bias
        pre.append(z)
        h = z if p == arch.num_layers - 1 else _activate(arch.activation, z)
        acts.append(h)
    return pre, acts


def forward(arch: Architecture, params: Sequence[np.ndarray], x: np.ndarray) -> np.ndarray:
    """B x d_L logits; the activation is applied after every layer but the last."""
    return _forward_cache(arch, params, x)[1][-1]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss(arch: Architecture, params: Sequence[np.ndarray], batch: Batch) -> float:
    logp = _log_softmax(forward(arch, params, batch.inputs))
    value = float(-logp[np.arange(len(batch)), batch.labels].mean())
    if not np.isfinite(value):
        raise NumericalFailure(f"non-finite loss {value}")
    return value


def loss_and_grad(arch: Architecture, params: Sequence[np.ndarray], batch: Batch) -> tuple[float, LayeredParams]:
    """Mean softmax cross-entropy over the batch and its gradient by backprop."""
    labels = np.asarray(batch.labels)
    if labels.min() < 0 or labels.max() >= arch.num_classes:
        raise ContractViolation(f"labels must lie in [0, {arch.num_classes})")
    pre, acts = _forward_cache(arch, params, batch.inputs)
    n = len(batch)
    logp = _log_softmax(acts[-1])
    value = float(-logp[np.arange(n), labels].mean())
    if not np.isfinite(value):
        raise NumericalFailure(f"non-finite loss {value}")

    delta = np.exp(logp)
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    grads: list[np.ndarray] = [np.empty(0)] * arch.num_layers
    for p in reversed(range(arch.num_layers)):
        weight, _ = split_layer(arch, p, params[p])
        parts = [(delta.T @ acts[p]).ravel()]
        if arch.bias:
            parts.append(delta.sum(axis=0))
        grads[p] = np.concatenate(parts)
        if p > 0:
            delta = (delta @ weight) * _activation_grad(arch.activation, pre[p - 1], acts[p])
    return value, grads


def finite_diff_grad(arch: Architecture, params: Sequence[np.ndarray], batch: Batch, h: float = 1e-4) -> LayeredParams:
    """Central-difference gradient, one coordinate at a time (test oracle)."""
    if h <= 0:
        raise ContractViolation("finite-difference step must be positive")
    work = [np.array(layer, dtype=float) for layer in params]
    grads = []
    for layer in work:
        g = np.zeros_like(layer)
        for j in range(layer.size):
            orig = layer[j]
            layer[j] = orig + h
            up = loss(arch, work, batch)
            layer[j] = orig - h
            down = loss(arch, work, batch)
            layer[j] = orig
            g[j] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def layer_norms(params: Sequence[np.ndarray]) -> list[float]:
    return [float(np.linalg.norm(layer)) for layer in params]


def predict(arch: Architecture, params: Sequence[np.ndarray], x: np.ndarray) -> np.ndarray:
    return forward(arch, params, x).argmax(axis=1)


def accuracy(arch: Architecture, params: Sequence[np.ndarray], x: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(predict(arch, params, x) == labels))


def format_params(params: Sequence[np.ndarray]) -> str:
    """Text form: ``L``, then the per-layer lengths, then one line of values per layer."""
    lines = [str(len(params)), " ".join(str(layer.size) for layer in params)]
    lines += [" ".join(repr(float(v)) for v in layer) for layer in params]
    return "\n".join(lines) + "\n"


def parse_params(text: str) -> LayeredParams:
    lines = text.splitlines()
    n_layers = int(lines[0])
    sizes = [int(s) for s in lines[1].split()] if n_layers else []
    if len(sizes) != n_layers:
        raise ContractViolation("layer-length line does not match layer count")
    params = []
    for size, line in zip(sizes, lines[2 : 2 + n_layers]):
        layer = np.array([float(v) for v in line.split()])
        if layer.size != size:
            raise ContractViolation(f"layer has {layer.size} values, header says {size}")
        params.append(layer)
    return params


def save_params(path: str | Path, params: Sequence[np.ndarray]) -> None:
    Path(path).write_text(format_params(params))


def load_params(path: str | Path) -> LayeredParams:
    return parse_params(Path(path).read_text())
