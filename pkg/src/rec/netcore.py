"""Minimal dense-network engine: init, forward, CE loss, manual backprop, SGD.

All math is float64. The flat-parameter view concatenates, per layer,
W.ravel() (row-major) followed by b; every module in this package that
talks about "aligned vectors" means this ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RELU = "relu"
IDENTITY = "identity"


@dataclass(frozen=True)
class Arch:
    """Layer structure of a dense classifier: input -> hidden widths -> K logits."""

    input_dim: int
    hidden_widths: tuple[int, ...]
    output_dim: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError(f"bad arch dims: {self.input_dim}, {self.output_dim}")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError(f"hidden widths must be >= 1: {self.hidden_widths}")

    @property
    def widths(self) -> list[int]:
        return [self.input_dim, *self.hidden_widths, self.output_dim]

    @property
    def num_layers(self) -> int:
        return len(self.hidden_widths) + 1

    def param_count(self) -> int:
        ws = self.widths
        return sum(fi * fo + fo for fi, fo in zip(ws[:-1], ws[1:]))


@dataclass
class Layer:
    weight: np.ndarray  # [fan_in, fan_out]
    bias: np.ndarray    # [fan_out]
    activation: str     # RELU or IDENTITY

    def copy(self) -> "Layer":
        return Layer(self.weight.copy(), self.bias.copy(), self.activation)


@dataclass
class DenseNet:
    arch: Arch
    layers: list[Layer]

    def __post_init__(self):
        ws = self.arch.widths
        if len(self.layers) != self.arch.num_layers:
            raise ValueError("layer count does not match arch")
        for l, (fi, fo) in zip(self.layers, zip(ws[:-1], ws[1:])):
            if l.weight.shape != (fi, fo) or l.bias.shape != (fo,):
                raise ValueError(f"layer shape {l.weight.shape} does not chain with arch {ws}")
        if self.layers[-1].activation != IDENTITY:
            raise ValueError("final layer must emit raw logits")

    def copy(self) -> "DenseNet":
        return DenseNet(self.arch, [l.copy() for l in self.layers])

    def param_count(self) -> int:
        return self.arch.param_count()

    def get_flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.weight.ravel(), l.bias]) for l in self.layers])

    def set_flat(self, flat: np.ndarray) -> None:
        if flat.shape != (self.param_count(),):
            raise ValueError(f"flat vector length {flat.shape} != {self.param_count()}")
        off = 0
        for l in self.layers:
            n = l.weight.size
            l.weight[...] = flat[off:off + n].reshape(l.weight.shape)
            off += n
            l.bias[...] = flat[off:off + l.bias.size]
            off += l.bias.size

    def layer_slices(self) -> list[tuple[slice, slice]]:
        """Flat-view (weight_slice, bias_slice) per layer."""
        out, off = [], 0
        for l in self.layers:
            n = l.weight.size
            out.append((slice(off, off + n), slice(off + n, off + n + l.bias.size)))
            off += n + l.bias.size
        return out


@dataclass
class Batch:
    inputs: np.ndarray  # [n, input_dim]
    labels: np.ndarray  # [n], ints in 0..K-1

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("batch must be 2-D inputs and 1-D labels")
        if self.inputs.shape[0] != self.labels.shape[0] or self.inputs.shape[0] < 1:
            raise ValueError("batch size mismatch or empty batch")


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)   # z_l per layer
    post: list[np.ndarray] = field(default_factory=list)  # a_l per layer


def init_network(arch: Arch, seed: int) -> DenseNet:
    """He-initialized network: W ~ N(0, 2/fan_in), biases zero. Deterministic per seed."""
    rng = np.random.default_rng(seed)
    ws = arch.widths
    layers = []
    for i, (fi, fo) in enumerate(zip(ws[:-1], ws[1:])):
        w = rng.normal(0.0, np.sqrt(2.0 / fi), size=(fi, fo))
        act = IDENTITY if i == len(ws) - 2 else RELU
        layers.append(Layer(w, np.zeros(fo), act))
    return DenseNet(arch, layers)


def forward(net: DenseNet, batch: Batch) -> tuple[np.ndarray, ForwardCache]:
    if batch.inputs.shape[1] != net.arch.input_dim:
        raise ValueError(f"input dim {batch.inputs.shape[1]} != arch {net.arch.input_dim}")
    cache = ForwardCache(inputs=batch.inputs)
    a = batch.inputs
    for l in net.layers:
        z = a @ l.weight + l.bias
        cache.pre.append(z)
        a = np.maximum(z, 0.0) if l.activation == RELU else z
        cache.post.append(a)
    return a, cache


def loss_ce(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    value = float(np.mean(logz - shifted[np.arange(n), labels]))
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    dlogits = probs
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return value, dlogits


def backward(net: DenseNet, cache: ForwardCache, dlogits: np.ndarray) -> np.ndarray:
    """Gradient of the loss w.r.t. every parameter, as a flat vector."""
    if dlogits.shape != cache.pre[-1].shape:
        raise ValueError("dlogits shape does not match cached forward")
    grads: list[np.ndarray] = []
    delta = dlogits
    for i in range(len(net.layers) - 1, -1, -1):
        a_prev = cache.inputs if i == 0 else cache.post[i - 1]
        gw = a_prev.T @ delta
        gb = delta.sum(axis=0)
        grads.append(np.concatenate([gw.ravel(), gb]))
        if i > 0:
            delta = delta @ net.layers[i].weight.T
            if net.layers[i - 1].activation == RELU:
                delta = delta * (cache.pre[i - 1] > 0)
    return np.concatenate(grads[::-1])


def sgd_step(net: DenseNet, grads: np.ndarray, lr: float, momentum: float = 0.0,
             velocity: np.ndarray | None = None) -> np.ndarray:
    """One (momentum) SGD step in place; returns the updated velocity buffer."""
    if velocity is None:
        velocity = np.zeros_like(grads)
    velocity = momentum * velocity + grads
    net.set_flat(net.get_flat() - lr * velocity)
    return velocity


def predict_logits(net: DenseNet, inputs: np.ndarray, batch_size: int = 512) -> np.ndarray:
    if inputs.shape[0] == 0:
        raise ValueError("empty dataset")
    chunks = []
    for i in range(0, inputs.shape[0], batch_size):
        a = inputs[i:i + batch_size]
        for l in net.layers:
            z = a @ l.weight + l.bias
            a = np.maximum(z, 0.0) if l.activation == RELU else z
        chunks.append(a)
    return np.vstack(chunks)


def evaluate(net: DenseNet, inputs: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy; argmax ties resolve to the lowest class index."""
    logits = predict_logits(net, inputs)
    return float(np.mean(np.argmax(logits, axis=1) == labels))
