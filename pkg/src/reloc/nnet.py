"""Minimal dense-layer network with manual backpropagation and RMSprop.

Everything is float64 and deterministic: identical seeds, data order and
hyperparameters give bit-identical weights. Models serialize to a flat
little-endian binary container (magic "RLNN").
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeMismatch

ACTIVATIONS = ("identity", "relu", "tanh")
_ACT_TAG = {name: i for i, name in enumerate(ACTIVATIONS)}

MAGIC = b"RLNN"
FORMAT_VERSION = 1


def _apply_activation(name, z):
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    raise ShapeMismatch(f"unknown activation {name!r}")


def _activation_grad(name, z, a):
    # a is the cached activation output for z
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    raise ShapeMismatch(f"unknown activation {name!r}")


@dataclass
class Layer:
    weights: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray     # (fan_out,)
    activation: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeMismatch("inconsistent layer shapes")
        if self.activation not in ACTIVATIONS:
            raise ShapeMismatch(f"unknown activation {self.activation!r}")


@dataclass
class DenseNet:
    layers: list

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weights.shape[1] != b.weights.shape[0]:
                raise ShapeMismatch("adjacent layer widths are incompatible")

    @property
    def input_width(self):
        return self.layers[0].weights.shape[0]

    @property
    def output_width(self):
        return self.layers[-1].weights.shape[1]

    def parameters(self):
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.bias)
        return out


def init_weights(shape, seed):
    """Xavier-uniform weights in [-a, a], a = sqrt(6 / (fan_in + fan_out))."""
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    fan_in, fan_out = shape
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, shape)


def init_dense_net(widths, activations, seed):
    """Build a DenseNet with Xavier weights and zero biases."""
    if len(activations) != len(widths) - 1:
        raise ShapeMismatch("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for i, act in enumerate(activations):
        w = init_weights((widths[i], widths[i + 1]), rng)
        layers.append(Layer(w, np.zeros(widths[i + 1]), act))
    return DenseNet(layers)


def forward(net, batch):
    """Deterministic layer-wise affine + activation. batch is (n, in)."""
    out, _ = forward_cached(net, batch)
    return out


def forward_cached(net, batch):
    """Forward pass keeping per-layer caches for backward()."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_width:
        raise ShapeMismatch(
            f"input width {x.shape} does not match net input {net.input_width}")
    caches = []
    for layer in net.layers:
        z = x @ layer.weights + layer.bias
        a = _apply_activation(layer.activation, z)
        caches.append((x, z, a))
        x = a
    return x, caches


def backward(net, caches, loss_grad):
    """Reverse-mode gradients for all weights and biases.

    loss_grad is dL/d(output), shape (n, out). Returns (grads, input_grad)
    where grads is a list of (dW, db) aligned with net.layers.
    """
    g = np.asarray(loss_grad, dtype=np.float64)
    if g.shape != caches[-1][2].shape:
        raise ShapeMismatch("loss_grad shape does not match network output")
    grads = [None] * len(net.layers)
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        x, z, a = caches[idx]
        dz = g * _activation_grad(layer.activation, z, a)
        grads[idx] = (x.T @ dz, dz.sum(axis=0))
        g = dz @ layer.weights.T
    return grads, g


def flatten_grads(grads):
    out = []
    for dw, db in grads:
        out.append(dw)
        out.append(db)
    return out


@dataclass
class RmspropState:
    learning_rate: float = 5e-4
    decay: float = 0.9
    epsilon: float = 1e-8
    accumulators: list = field(default_factory=list)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ShapeMismatch("learning rate must be positive")


def rmsprop_step(state, params, grads):
    """One RMSprop update, in place: p <- p - lr * g / sqrt(acc + eps)."""
    if len(params) != len(grads):
        raise ShapeMismatch("params and grads differ in length")
    if not state.accumulators:
        state.accumulators = [np.zeros_like(p) for p in params]
    for p, g, acc in zip(params, grads, state.accumulators):
        if p.shape != g.shape:
            raise ShapeMismatch("parameter/gradient shape mismatch")
        acc *= state.decay
        acc += (1.0 - state.decay) * g * g
        p -= state.learning_rate * g / np.sqrt(acc + state.epsilon)
    return params


def save_net(path, net):
    """Write the RLNN container: header then per-layer tag/shape/data."""
    save_layers(path, net.layers)


def save_layers(path, layers):
    """Like save_net, but takes a bare layer list (the widths need not
    chain, so several sub-networks can share one file)."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(layers)))
        for layer in layers:
            rows, cols = layer.weights.shape
            f.write(struct.pack("<BII", _ACT_TAG[layer.activation], rows, cols))
            f.write(layer.weights.astype("<f8").tobytes(order="C"))
            f.write(layer.bias.astype("<f8").tobytes())


def load_net(path):
    return DenseNet(load_layers(path))


def load_layers(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise DataError(f"{path}: bad magic, not an RLNN model file")
    version, n_layers = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported model version {version}")
    offset = 12
    layers = []
    for _ in range(n_layers):
        try:
            tag, rows, cols = struct.unpack_from("<BII", data, offset)
        except struct.error:
            raise DataError(f"{path}: truncated model file")
        offset += 9
        n_w, n_b = rows * cols * 8, cols * 8
        if offset + n_w + n_b > len(data):
            raise DataError(f"{path}: truncated model file")
        w = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=offset).reshape(rows, cols)
        offset += n_w
        b = np.frombuffer(data, dtype="<f8", count=cols, offset=offset)
        offset += n_b
        if tag >= len(ACTIVATIONS):
            raise DataError(f"{path}: unknown activation tag {tag}")
        layers.append(Layer(w.copy(), b.copy(), ACTIVATIONS[tag]))
    return layers
