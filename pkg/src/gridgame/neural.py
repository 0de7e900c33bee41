"""Small feed-forward network used as a Q-value approximator.

One output unit per discrete action, tanh hidden layers, linear output.
Gradients are computed analytically for the one-sided TD loss
½·(target − Q(x)[a])² and are verified against finite differences in the
test suite.  Parameters flatten to a single vector in layer order
(W0, b0, W1, b1, ...), which is also the gradient layout.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_layers: tuple[int, ...]
    output_dim: int

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_layers, self.output_dim)
        if any(d < 1 for d in dims):
            raise ValueError(f"all layer dims must be >= 1, got {dims}")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_layers, self.output_dim)

    @property
    def n_params(self) -> int:
        dims = self.layer_dims
        return sum(dims[i + 1] * dims[i] + dims[i + 1] for i in range(len(dims) - 1))


class NetworkParams:
    """Weight matrices (out x in) and bias vectors, one pair per layer."""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        if len(weights) != len(biases):
            raise ValueError("weights and biases must pair up layer by layer")
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"inconsistent layer shapes {w.shape} / {b.shape}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights],
                             [b.copy() for b in self.biases])

    def to_vector(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def from_vector(self, vector: np.ndarray) -> "NetworkParams":
        """New params with this object's shapes and `vector`'s values."""
        vector = np.asarray(vector, dtype=float)
        weights, biases, offset = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vector[offset:offset + w.size].reshape(w.shape))
            offset += w.size
            biases.append(vector[offset:offset + b.size])
            offset += b.size
        if offset != vector.size:
            raise ValueError(f"vector has {vector.size} entries, expected {offset}")
        return NetworkParams(weights, biases)

    def all_finite(self) -> bool:
        return all(np.isfinite(w).all() for w in self.weights) and \
            all(np.isfinite(b).all() for b in self.biases)

    def equals(self, other: "NetworkParams") -> bool:
        """Bitwise parameter equality."""
        return self.n_layers == other.n_layers and all(
            np.array_equal(a, b)
            for a, b in zip(self.weights + self.biases,
                            other.weights + other.biases))


def init(spec: NetworkSpec, scale: float, output_bias: float,
         rng: np.random.Generator) -> NetworkParams:
    """Uniform[-scale, scale] weights and hidden biases; output biases set to
    `output_bias` so that initial Q-values sit at the optimistic level."""
    if scale < 0:
        raise ValueError(f"scale must be >= 0, got {scale}")
    dims = spec.layer_dims
    weights, biases = [], []
    for i in range(len(dims) - 1):
        weights.append(rng.uniform(-scale, scale, size=(dims[i + 1], dims[i])))
        if i == len(dims) - 2:
            biases.append(np.full(dims[i + 1], float(output_bias)))
        else:
            biases.append(rng.uniform(-scale, scale, size=dims[i + 1]))
    return NetworkParams(weights, biases)


def forward(params: NetworkParams, x: Sequence[float]) -> np.ndarray:
    """Q-values for every action: tanh hidden layers, linear output."""
    a = np.asarray(x, dtype=float)
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = w @ a + b
        if i != last:
            a = np.tanh(a)
    return a


def _forward_activations(params: NetworkParams, x: Sequence[float]) -> list[np.ndarray]:
    """Layer inputs [x, h1, ..., h_last] plus the final output, pre-backprop."""
    activations = [np.asarray(x, dtype=float)]
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = w @ activations[-1] + b
        activations.append(np.tanh(z) if i != last else z)
    return activations


def td_gradient(params: NetworkParams, x: Sequence[float], action_index: int,
                target: float) -> np.ndarray:
    """Gradient of ½·(target − Q(x)[action_index])² w.r.t. the flat vector.

    The target is treated as a constant.
    """
    activations = _forward_activations(params, x)
    output = activations[-1]
    if not 0 <= action_index < output.shape[0]:
        raise ValueError(f"action index {action_index} out of range")
    # delta over output layer: residual only on the trained action's unit.
    delta = np.zeros_like(output)
    delta[action_index] = output[action_index] - float(target)
    grads_w: list[np.ndarray] = [None] * params.n_layers
    grads_b: list[np.ndarray] = [None] * params.n_layers
    for i in range(params.n_layers - 1, -1, -1):
        grads_w[i] = np.outer(delta, activations[i])
        grads_b[i] = delta
        if i > 0:
            back = params.weights[i].T @ delta
            delta = back * (1.0 - activations[i] ** 2)  # tanh'
    parts = []
    for gw, gb in zip(grads_w, grads_b):
        parts.append(gw.ravel())
        parts.append(gb)
    return np.concatenate(parts)


def apply_update(params: NetworkParams, gradient: np.ndarray,
                 learning_rate: float) -> NetworkParams:
    """One plain gradient-descent step; returns new params."""
    if learning_rate <= 0:
        raise ValueError(f"learning rate must be > 0, got {learning_rate}")
    gradient = np.asarray(gradient, dtype=float)
    if not np.isfinite(gradient).all():
        raise ValueError("non-finite gradient")
    return params.from_vector(params.to_vector() - learning_rate * gradient)


# ---------------------------------------------------------------------------
# Serialization (versioned, full round-trip float precision via JSON repr)
# ---------------------------------------------------------------------------

def network_to_dict(spec: NetworkSpec, params: NetworkParams) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "spec": {
            "input_dim": spec.input_dim,
            "hidden_layers": list(spec.hidden_layers),
            "output_dim": spec.output_dim,
        },
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def network_from_dict(data: dict) -> tuple[NetworkSpec, NetworkParams]:
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported network format version {version!r}")
    spec = NetworkSpec(
        input_dim=int(data["spec"]["input_dim"]),
        hidden_layers=tuple(int(h) for h in data["spec"]["hidden_layers"]),
        output_dim=int(data["spec"]["output_dim"]),
    )
    params = NetworkParams([np.array(w, dtype=float) for w in data["weights"]],
                           [np.array(b, dtype=float) for b in data["biases"]])
    expected = [(spec.layer_dims[i + 1], spec.layer_dims[i])
                for i in range(len(spec.layer_dims) - 1)]
    if [w.shape for w in params.weights] != expected:
        raise ValueError("stored weight shapes do not match the stored spec")
    return spec, params


def save_network(path: str | os.PathLike, spec: NetworkSpec,
                 params: NetworkParams) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(network_to_dict(spec, params), handle, sort_keys=True)


def load_network(path: str | os.PathLike) -> tuple[NetworkSpec, NetworkParams]:
    with open(path, "r", encoding="utf-8") as handle:
        return network_from_dict(json.load(handle))
