"""Flat parameter vectors and a small feed-forward network with exact backprop.

The same network class backs both the policy and the inverse dynamics model.
Parameters are flattened layer-major: each layer's weight matrix (stored as
``(fan_in, fan_out)``) in row-major order, followed by its bias.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

RELU = "relu"
IDENTITY = "identity"
_ACTIVATIONS = (RELU, IDENTITY)


class ShapeError(ValueError):
    """Raised when an array does not match the network or vector it is used with."""


@dataclass(frozen=True)
class NetShape:
    """Layer sizes plus per-layer activation tags; enough to rebuild a net from a vector."""

    sizes: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise ShapeError("a network needs at least an input and an output size")
        if len(self.activations) != len(self.sizes) - 1:
            raise ShapeError("one activation tag per layer is required")
        for act in self.activations:
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if any(s < 1 for s in self.sizes):
            raise ShapeError("layer sizes must be positive")

    @classmethod
    def mlp(cls, input_dim: int, hidden: Sequence[int], output_dim: int) -> "NetShape":
        """Rectifier hidden layers and an identity output layer."""
        sizes = (input_dim, *hidden, output_dim)
        acts = (RELU,) * len(hidden) + (IDENTITY,)
        return cls(tuple(int(s) for s in sizes), acts)

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    @property
    def num_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class MlpNet:
    shape: NetShape
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        sizes = self.shape.sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ShapeError("layer count does not match shape")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[k], sizes[k + 1]) or b.shape != (sizes[k + 1],):
                raise ShapeError(
                    f"layer {k}: got W{w.shape} b{b.shape}, expected "
                    f"W{(sizes[k], sizes[k + 1])} b{(sizes[k + 1],)}"
                )

    @property
    def input_dim(self) -> int:
        return self.shape.input_dim

    @property
    def output_dim(self) -> int:
        return self.shape.output_dim

    def __eq__(self, other):
        if not isinstance(other, MlpNet) or other.shape != self.shape:
            return NotImplemented if not isinstance(other, MlpNet) else False
        return all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights)) and all(
            np.array_equal(a, b) for a, b in zip(self.biases, other.biases)
        )

    __hash__ = None

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)


def make_net(shape: NetShape, weights: Sequence, biases: Sequence) -> MlpNet:
    return MlpNet(shape, tuple(_frozen(w) for w in weights), tuple(_frozen(b) for b in biases))


def init_net(shape: NetShape, rng: np.random.Generator) -> MlpNet:
    """Uniform init in +-1/sqrt(fan_in) for weights and biases."""
    ws, bs = [], []
    for fan_in, fan_out in zip(shape.sizes[:-1], shape.sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        bs.append(rng.uniform(-bound, bound, size=fan_out))
    return make_net(shape, ws, bs)


def zeros_net(shape: NetShape) -> MlpNet:
    return unflatten(shape, np.zeros(shape.num_params))


def flatten(net: MlpNet) -> np.ndarray:
    parts = []
    for w, b in zip(net.weights, net.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten(shape: NetShape, vector) -> MlpNet:
    vec = np.asarray(vector, dtype=np.float64)
    if vec.ndim != 1 or vec.size != shape.num_params:
        raise ShapeError(f"expected a flat vector of length {shape.num_params}, got shape {vec.shape}")
    ws, bs = [], []
    pos = 0
    for fan_in, fan_out in zip(shape.sizes[:-1], shape.sizes[1:]):
        ws.append(vec[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out))
        pos += fan_in * fan_out
        bs.append(vec[pos : pos + fan_out])
        pos += fan_out
    return make_net(shape, ws, bs)


def _check_input(net: MlpNet, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"input of shape {x.shape} does not fit input_dim={net.input_dim}")
    return x, single


def _forward_cache(net: MlpNet, x: np.ndarray):
    acts = [x]
    pre = []
    h = x
    for w, b, act in zip(net.weights, net.biases, net.shape.activations):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if act == RELU else z
        acts.append(h)
    return acts, pre


def forward(net: MlpNet, x) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of rows."""
    x, single = _check_input(net, x)
    if not np.all(np.isfinite(x)):
        raise ValueError("network input contains non-finite values")
    h = x
    for w, b, act in zip(net.weights, net.biases, net.shape.activations):
        h = h @ w + b
        if act == RELU:
            h = np.maximum(h, 0.0)
    return h[0] if single else h


def backward(net: MlpNet, x, output_grad) -> np.ndarray:
    """Gradient of ``sum(output * output_grad)`` with respect to the flat parameters.

    For a batch, per-row gradients are summed. The result has the same layout
    as :func:`flatten`.
    """
    x, single = _check_input(net, x)
    g = np.asarray(output_grad, dtype=np.float64)
    if single:
        g = g[None, :] if g.ndim == 1 else g
    if g.shape != (x.shape[0], net.output_dim):
        raise ShapeError(f"output_grad of shape {g.shape} does not match output ({x.shape[0]}, {net.output_dim})")
    acts, pre = _forward_cache(net, x)
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.weights)
    for k in range(len(net.weights) - 1, -1, -1):
        if net.shape.activations[k] == RELU:
            g = g * (pre[k] > 0.0)
        grads_w[k] = acts[k].T @ g
        grads_b[k] = g.sum(axis=0)
        if k:
            g = g @ net.weights[k].T
    parts = []
    for gw, gb in zip(grads_w, grads_b):
        parts.append(gw.ravel())
        parts.append(gb)
    return np.concatenate(parts)


def mse_loss_and_grad(net: MlpNet, x, targets) -> tuple[float, np.ndarray]:
    """Mean over rows of the squared error summed over output dims, and its flat gradient."""
    x, _ = _check_input(net, x)
    y = forward(net, x)
    t = np.asarray(targets, dtype=np.float64).reshape(y.shape)
    diff = y - t
    m = x.shape[0]
    loss = float(np.sum(diff * diff) / m)
    return loss, backward(net, x, 2.0 * diff / m)


def sgd_step(params, grad, lr: float) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ShapeError(f"parameter length {params.shape} != gradient length {grad.shape}")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    return params - lr * grad


class Adam:
    """Adam over a flat parameter vector. Holds moment state; parameters are passed in and returned."""

    def __init__(self, size: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if params.shape != self.m.shape or grad.shape != self.m.shape:
            raise ShapeError("Adam state does not match parameter length")
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
