"""Dense layers and named parameters."""

import numpy as np

from ..errors import ConfigError
from .tape import Tensor, relu

ACTIVATIONS = ("relu", "identity")


class Parameter:
    __slots__ = ("name", "value")

    def __init__(self, name, value):
        self.name = name
        self.value = np.array(value, dtype=np.float64)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def bind(params, tape=None):
    """Map parameter names to tensors: watched leaves on ``tape``, else constants."""
    if tape is None:
        return {p.name: Tensor(p.value) for p in params}
    return {p.name: tape.watch(p) for p in params}


def glorot_uniform(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class DenseLayer:
    """activation(x @ W.T + b) for a row-batch x of shape (B, in)."""

    def __init__(self, name, weights, biases, activation="relu"):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        self.weights = Parameter(f"{name}.W", weights)
        self.biases = Parameter(f"{name}.b", biases)
        self.activation = activation
        out_dim, _ = self.weights.value.shape
        if self.biases.value.shape != (out_dim,):
            raise ConfigError(
                f"{name}: bias length {self.biases.value.shape} does not match {out_dim} rows")

    @classmethod
    def init(cls, name, n_in, n_out, rng, activation="relu"):
        return cls(name, glorot_uniform(rng, n_out, n_in), np.zeros(n_out), activation)

    @property
    def in_dim(self):
        return self.weights.value.shape[1]

    @property
    def out_dim(self):
        return self.weights.value.shape[0]

    def parameters(self):
        return [self.weights, self.biases]


def forward_dense(layer, x, bound=None):
    """Apply ``layer`` to a (B, in) batch; ``bound`` comes from :func:`bind`."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[-1] != layer.in_dim:
        raise ConfigError(
            f"{layer.weights.name}: input width {x.shape[-1]} != layer input {layer.in_dim}")
    if bound is None:
        bound = bind(layer.parameters())
    W = bound[layer.weights.name]
    b = bound[layer.biases.name]
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(1, -1)
    out = x @ W.T + b
    if layer.activation == "relu":
        out = relu(out)
    return out.reshape(-1) if squeeze else out


def forward_stack(layers, x, bound=None):
    for layer in layers:
        x = forward_dense(layer, x, bound)
    return x
