"""Small feed-forward networks with hand-written backpropagation.

Everything runs in float64. Layers compute ``act(x @ W + b)`` with ``W`` of
shape ``(input_dim, output_dim)``.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

Activation = Literal["relu", "tanh", "identity"]
ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: Activation = "relu"

    def __post_init__(self):
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ValueError("layer dims must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class Network:
    layers: list[LayerSpec]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int = 0

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.output_dim != b.input_dim:
                raise ValueError(f"layer dims do not chain: {a.output_dim} -> {b.input_dim}")
        for spec, w, b in zip(self.layers, self.weights, self.biases):
            if w.shape != (spec.input_dim, spec.output_dim) or b.shape != (spec.output_dim,):
                raise ValueError("weight shapes do not match layer specs")

    @classmethod
    def create(
        cls,
        dims: Sequence[int],
        activations: Sequence[Activation] | None = None,
        seed: int = 0,
        zero_output: bool = False,
    ) -> "Network":
        """Glorot-uniform weights, zero biases.

        ``activations`` defaults to relu on hidden layers and identity on the
        last. ``zero_output`` zeroes the final weight matrix so the network
        starts as the constant-zero map.
        """
        n = len(dims) - 1
        if activations is None:
            activations = ["relu"] * (n - 1) + ["identity"]
        if len(activations) != n:
            raise ValueError("need one activation per layer")
        rng = np.random.default_rng(seed)
        layers, weights, biases = [], [], []
        for i, act in enumerate(activations):
            fan_in, fan_out = dims[i], dims[i + 1]
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            layers.append(LayerSpec(fan_in, fan_out, act))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        if zero_output:
            weights[-1][:] = 0.0
        return cls(layers, weights, biases, seed)

    @classmethod
    def zeros(cls, dims: Sequence[int], activations: Sequence[Activation] | None = None) -> "Network":
        net = cls.create(dims, activations)
        for w in net.weights:
            w[:] = 0.0
        return net

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    def params(self) -> list[np.ndarray]:
        """Weights and biases interleaved; arrays are live views."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward_batch(np.atleast_2d(x))[0]

    def forward_batch(self, x: np.ndarray, keep: bool = False):
        """Forward pass over rows of ``x``.

        Returns the output matrix, or ``(output, cache)`` when ``keep`` is set.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected input of dim {self.input_dim}, got shape {x.shape}")
        cache = [x]
        h = x
        for spec, w, b in zip(self.layers, self.weights, self.biases):
            h = _activate(h @ w + b, spec.activation)
            cache.append(h)
        return (h, cache) if keep else h

    def backward_batch(self, cache: list[np.ndarray], grad_out: np.ndarray):
        """Backpropagate ``dL/d(output)``; returns ``(param_grads, dL/d(input))``.

        ``param_grads`` follows the ordering of :meth:`params`.
        """
        grads: list[np.ndarray] = []
        g = np.asarray(grad_out, dtype=np.float64)
        for i in range(len(self.layers) - 1, -1, -1):
            g = g * _activate_grad(cache[i + 1], self.layers[i].activation)
            grads.append(g.sum(axis=0))
            grads.append(cache[i].T @ g)
            g = g @ self.weights[i].T
        grads.reverse()
        return grads, g


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(out: np.ndarray, kind: str) -> np.ndarray | float:
    # expressed through the layer output, which is what the cache holds
    if kind == "relu":
        return (out > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - out * out
    return 1.0


def forward(net: Network, values) -> float:
    """Scalar logit of a single-output network for one input vector."""
    x = np.asarray(getattr(values, "values", values), dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward expects a single input vector")
    if net.output_dim != 1:
        raise ValueError("forward expects a single-output network")
    return float(net.forward_batch(x[None, :])[0, 0])


# -- pairwise cross-entropy ----------------------------------------------------


def softplus(x):
    """log(1 + e^x) without overflow."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def pairwise_loss(logit_booked, logit_not_booked):
    """-log(e^a / (e^a + e^b)) for a booked and b not-booked logit."""
    a = np.asarray(logit_booked, dtype=np.float64)
    b = np.asarray(logit_not_booked, dtype=np.float64)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("pairwise_loss needs finite logits")
    out = softplus(b - a)
    return float(out) if out.ndim == 0 else out


def pairwise_gradients(net: Network, x_booked: np.ndarray, x_not_booked: np.ndarray):
    """Mean pairwise loss over a batch and its exact gradient w.r.t. ``net.params()``."""
    xb = np.atleast_2d(np.asarray(x_booked, dtype=np.float64))
    xn = np.atleast_2d(np.asarray(x_not_booked, dtype=np.float64))
    if len(xb) == 0 or xb.shape != xn.shape:
        raise ValueError("batch must be non-empty with matching shapes")
    n = len(xb)
    out_b, cache_b = net.forward_batch(xb, keep=True)
    out_n, cache_n = net.forward_batch(xn, keep=True)
    diff = out_b[:, 0] - out_n[:, 0]
    loss = float(np.mean(softplus(-diff)))
    g = (-sigmoid(-diff) / n)[:, None]  # dL/d(diff)
    # backprop each side separately so identical inputs cancel exactly
    gb, _ = net.backward_batch(cache_b, g)
    gn, _ = net.backward_batch(cache_n, g)
    return loss, [a - b for a, b in zip(gb, gn)]


# -- optimization ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 10
    optimizer: Literal["sgd", "adam"] = "adam"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # L2 penalty coefficient added to the gradients (not to the reported loss)
    weight_decay: float = 0.0
    # with a validation callback, finish at the best-validating epoch (0 = untouched)
    restore_best: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


class SGD:
    def __init__(self, params: list[np.ndarray], lr: float):
        self.params, self.lr = params, lr

    def step(self, grads: list[np.ndarray]) -> None:
        for p, g in zip(self.params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, params: list[np.ndarray], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params, self.lr, self.eps = params, lr, eps
        self.b1, self.b2 = betas
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(params: list[np.ndarray], cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(params, cfg.learning_rate)
    return Adam(params, cfg.learning_rate, (cfg.beta1, cfg.beta2), cfg.eps)


@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)
    validation_loss: list[float] = field(default_factory=list)
    initial_validation_loss: float | None = None
    # epoch whose weights were kept; 0 means the starting weights
    best_epoch: int | None = None

    @property
    def final_loss(self) -> float | None:
        return self.epoch_loss[-1] if self.epoch_loss else None

    @property
    def final_validation_loss(self) -> float | None:
        return self.validation_loss[-1] if self.validation_loss else None


def fit(
    params: list[np.ndarray],
    loss_and_grads: Callable[[np.ndarray], tuple[float, list[np.ndarray]]],
    n_examples: int,
    cfg: TrainConfig,
    validate: Callable[[], float] | None = None,
) -> TrainHistory:
    """Minibatch training loop shared by every model.

    ``loss_and_grads`` receives the example indices of one batch. The batch
    order is a pure function of ``cfg.seed``.
    """
    if n_examples <= 0:
        raise ValueError("no training examples")
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(params, cfg)
    history = TrainHistory()
    keep = validate is not None and cfg.restore_best
    if keep:
        best_loss, best = validate(), [p.copy() for p in params]
        history.initial_validation_loss = best_loss
        history.best_epoch = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_examples)
        total = 0.0
        for start in range(0, n_examples, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grads(idx)
            if cfg.weight_decay:
                grads = [g + cfg.weight_decay * p for g, p in zip(grads, params)]
            opt.step(grads)
            total += loss * len(idx)
        history.epoch_loss.append(total / n_examples)
        if validate is not None:
            history.validation_loss.append(validate())
            if keep and history.validation_loss[-1] < best_loss:
                best_loss, best = history.validation_loss[-1], [p.copy() for p in params]
                history.best_epoch = epoch + 1
    if keep:
        for p, b in zip(params, best):
            p[...] = b
    return history


def train(net: Network, examples: tuple[np.ndarray, np.ndarray], cfg: TrainConfig) -> Network:
    """Fit ``net`` to (booked, not booked) input pairs; returns a trained copy."""
    xb, xn = (np.asarray(a, dtype=np.float64) for a in examples)
    if len(xb) == 0:
        raise ValueError("empty example stream")
    out = net.copy()
    out.history = fit(out.params(), lambda idx: pairwise_gradients(out, xb[idx], xn[idx]), len(xb), cfg)
    return out


# -- checkpoints ----------------------------------------------------------------


def network_to_dict(net: Network) -> dict:
    return {
        "layers": [
            {"input_dim": s.input_dim, "output_dim": s.output_dim, "activation": s.activation} for s in net.layers
        ],
        "weights": [w.ravel(order="C").tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "seed": net.seed,
    }


def network_from_dict(d: dict) -> Network:
    layers = [LayerSpec(int(l["input_dim"]), int(l["output_dim"]), l["activation"]) for l in d["layers"]]
    weights = [
        np.asarray(w, dtype=np.float64).reshape(s.input_dim, s.output_dim) for s, w in zip(layers, d["weights"])
    ]
    biases = [np.asarray(b, dtype=np.float64).reshape(s.output_dim) for s, b in zip(layers, d["biases"])]
    return Network(layers, weights, biases, int(d.get("seed", 0)))
