"""Small fully-connected classifier with hand-written backprop and exact HVPs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .precision import DEFAULT_LOSS_SCALE, PrecisionMode, quantize_buffer

ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError(f"layer dims must be >= 1, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        return self.in_dim * self.out_dim + self.out_dim


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_d1(name, z):
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    return np.ones_like(z)


def _act_d2(name, z):
    # relu: second derivative taken as zero everywhere (kink ignored)
    if name == "tanh":
        t = np.tanh(z)
        return -2.0 * t * (1.0 - t * t)
    return np.zeros_like(z)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(logz - shifted[np.arange(len(labels)), labels]))


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


@dataclass
class ForwardCache:
    inputs: list  # quantized input to each layer
    weights: list  # quantized compute copies of W
    pre: list  # z = x W^T + b
    logits: np.ndarray


@dataclass
class BackwardResult:
    grads: list  # per layer (dW, db), already unscaled
    loss: float
    nonfinite: bool  # loss or any gradient entry is inf/nan

    def flat(self, layer: int) -> np.ndarray:
        dW, db = self.grads[layer]
        return np.concatenate([dW.ravel(), db])


class Network:
    """Stack of affine layers with elementwise activations and softmax-CE loss.

    ``weights[i]`` has shape (out_dim, in_dim).  These arrays are the master
    copy and are never quantized in place.
    """

    def __init__(self, specs: Sequence[LayerSpec], weights, biases):
        specs = list(specs)
        if not specs:
            raise ConfigError("network needs at least one layer")
        for a, b in zip(specs, specs[1:]):
            if a.out_dim != b.in_dim:
                raise ConfigError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        self.specs = specs
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for s, w, b in zip(specs, self.weights, self.biases):
            if w.shape != (s.out_dim, s.in_dim) or b.shape != (s.out_dim,):
                raise ConfigError("parameter shapes do not match layer specs")

    @classmethod
    def init(cls, specs: Sequence[LayerSpec], seed: int) -> Network:
        """He-style Gaussian init for relu layers, Glorot otherwise; zero biases."""
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for s in specs:
            fan = 2.0 / s.in_dim if s.activation == "relu" else 2.0 / (s.in_dim + s.out_dim)
            ws.append(rng.standard_normal((s.out_dim, s.in_dim)) * np.sqrt(fan))
            bs.append(np.zeros(s.out_dim))
        return cls(specs, ws, bs)

    @classmethod
    def mlp(cls, dims: Sequence[int], activation: str, seed: int) -> Network:
        """Hidden layers use ``activation``; the output layer is identity."""
        specs = [
            LayerSpec(i, o, activation if k < len(dims) - 2 else "identity")
            for k, (i, o) in enumerate(zip(dims, dims[1:]))
        ]
        return cls.init(specs, seed)

    @property
    def n_layers(self) -> int:
        return len(self.specs)

    @property
    def n_classes(self) -> int:
        return self.specs[-1].out_dim

    def copy(self) -> Network:
        return Network(self.specs, self.weights, self.biases)

    def layer_params(self, layer: int) -> np.ndarray:
        return np.concatenate([self.weights[layer].ravel(), self.biases[layer]])

    def set_layer_params(self, layer: int, flat: np.ndarray) -> None:
        s = self.specs[layer]
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (s.n_params,):
            raise ConfigError(f"layer {layer} expects {s.n_params} params, got {flat.shape}")
        self.weights[layer] = flat[: s.in_dim * s.out_dim].reshape(s.out_dim, s.in_dim).copy()
        self.biases[layer] = flat[s.in_dim * s.out_dim :].copy()

    def _modes(self, precision_map) -> list:
        if precision_map is None:
            return [PrecisionMode.FP32] * self.n_layers
        modes = [PrecisionMode(m) for m in precision_map]
        if len(modes) != self.n_layers:
            raise ConfigError(f"precision map covers {len(modes)} of {self.n_layers} layers")
        return modes

    def forward(self, X, precision_map=None) -> ForwardCache:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.specs[0].in_dim:
            raise ConfigError(f"batch shape {X.shape} does not match input dim {self.specs[0].in_dim}")
        modes = self._modes(precision_map)
        cache = ForwardCache([], [], [], X)
        a = X
        with np.errstate(over="ignore", invalid="ignore"):
            for s, W, b, m in zip(self.specs, self.weights, self.biases, modes):
                x = quantize_buffer(a, m)
                Wq = quantize_buffer(W, m)
                z = quantize_buffer(x @ Wq.T + quantize_buffer(b, m), m)
                a = quantize_buffer(_act(s.activation, z), m)
                cache.inputs.append(x)
                cache.weights.append(Wq)
                cache.pre.append(z)
        cache.logits = a
        return cache

    def loss(self, X, labels, precision_map=None) -> float:
        return cross_entropy(self.forward(X, precision_map).logits, np.asarray(labels))

    def backward(
        self,
        X,
        labels,
        precision_map=None,
        loss_scale: float = DEFAULT_LOSS_SCALE,
        cache: ForwardCache | None = None,
    ) -> BackwardResult:
        """Per-layer gradients of the mean cross-entropy.

        Gradient signals are quantized in each layer's mode on the way down.
        When any layer runs FP16 the upstream gradient is multiplied by
        ``loss_scale`` first and divided back out of the returned gradients.
        """
        labels = np.asarray(labels)
        modes = self._modes(precision_map)
        if cache is None:
            cache = self.forward(X, modes)
        n = len(labels)
        scale = loss_scale if PrecisionMode.FP16 in modes else 1.0
        grads = [None] * self.n_layers
        with np.errstate(over="ignore", invalid="ignore"):
            loss = cross_entropy(cache.logits, labels)
            g = (softmax(cache.logits) - one_hot(labels, self.n_classes)) / n
            if scale != 1.0:
                g = g * scale
            for i in range(self.n_layers - 1, -1, -1):
                m = modes[i]
                g = quantize_buffer(g, m)
                delta = quantize_buffer(g * _act_d1(self.specs[i].activation, cache.pre[i]), m)
                dW = quantize_buffer(delta.T @ cache.inputs[i], m)
                db = quantize_buffer(delta.sum(axis=0), m)
                if scale != 1.0:
                    dW, db = dW / scale, db / scale
                grads[i] = (dW, db)
                if i:
                    g = quantize_buffer(delta @ cache.weights[i], m)
        nonfinite = not np.isfinite(loss) or not all(
            np.isfinite(dW).all() and np.isfinite(db).all() for dW, db in grads
        )
        return BackwardResult(grads, loss, nonfinite)

    def hvp_operator(self, layer: int, X, labels) -> LayerHvp:
        return LayerHvp(self, layer, X, labels)


class LayerHvp:
    """v -> H_l v for the Hessian block of the minibatch loss w.r.t. one layer.

    R-operator (Pearlmutter) pass on the full-precision master weights.  The
    forward quantities that do not depend on v are computed once here.
    """

    def __init__(self, net: Network, layer: int, X, labels):
        if not 0 <= layer < net.n_layers:
            raise ConfigError(f"no layer {layer}")
        self.net = net
        self.layer = layer
        self.dim = net.specs[layer].n_params
        X = np.asarray(X, dtype=np.float64)
        labels = np.asarray(labels)
        # own copies so later weight updates cannot leak into a stored operator
        self._W = [w.copy() for w in net.weights]
        acts, pre = [X], []
        for s, W, b in zip(net.specs, self._W, net.biases):
            pre.append(acts[-1] @ W.T + b)
            acts.append(_act(s.activation, pre[-1]))
        self._acts, self._pre = acts, pre
        n = len(labels)
        self._p = softmax(acts[-1])
        # dL/da for the output of each layer from `layer` up
        dA = [None] * net.n_layers
        g = (self._p - one_hot(labels, net.n_classes)) / n
        for i in range(net.n_layers - 1, layer - 1, -1):
            dA[i] = g
            g = (g * _act_d1(net.specs[i].activation, pre[i])) @ self._W[i]
        self._dA = dA
        self._n = n

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.size == 0:
            raise ConfigError("direction vector is empty")
        if v.shape != (self.dim,):
            raise ConfigError(f"direction has shape {v.shape}, layer has {self.dim} params")
        net, l = self.net, self.layer
        s = net.specs[l]
        VW = v[: s.in_dim * s.out_dim].reshape(s.out_dim, s.in_dim)
        Vb = v[s.in_dim * s.out_dim :]

        Rz = [None] * net.n_layers
        Ra = None
        for i in range(l, net.n_layers):
            Rz[i] = self._acts[i] @ VW.T + Vb if i == l else Ra @ self._W[i].T
            Ra = _act_d1(net.specs[i].activation, self._pre[i]) * Rz[i]

        p = self._p
        RdA = p * (Ra - (p * Ra).sum(axis=1, keepdims=True)) / self._n
        for i in range(net.n_layers - 1, l - 1, -1):
            name, z = net.specs[i].activation, self._pre[i]
            Rdelta = _act_d2(name, z) * Rz[i] * self._dA[i] + _act_d1(name, z) * RdA
            if i == l:
                return np.concatenate([(Rdelta.T @ self._acts[l]).ravel(), Rdelta.sum(axis=0)])
            RdA = Rdelta @ self._W[i]


def hvp(op, v) -> np.ndarray:
    """Apply a Hessian-vector operator (anything with ``dim`` and ``__call__``)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ConfigError("direction vector is empty")
    return np.asarray(op(v), dtype=np.float64)
