"""Minimal dense-layer engine with hand-written reverse-mode gradients.

Everything runs on float64 numpy arrays shaped (batch, width).  Layers expose
``forward(x, mode, rng) -> (y, cache)`` and ``backward(cache, grad) ->
(grad_in, param_grads)``; a ``Stack`` chains layers and records a ``Tape`` so
the whole stack can be differentiated after one forward pass.  Because every
layer applies row-wise, weights are shared across the batch axis and the
backward pass sums parameter gradients over it.

Training state (parameters, Adam moments, batchnorm running stats) is held in
plain ndarrays mutated in place; no global state, no hidden randomness --
dropout masks come from the generator handed to ``forward``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

# When true, every stack forward/backward asserts finite outputs.
DEBUG_NAN_CHECKS = False


def _check_finite(label: str, arr: np.ndarray) -> None:
    if DEBUG_NAN_CHECKS and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {label}")


def fan_in_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Affine:
    kind = "affine"

    def __init__(self, width_in: int, width_out: int, rng: np.random.Generator):
        self.width_in = width_in
        self.width_out = width_out
        self.params = {
            "w": fan_in_uniform(rng, width_in, (width_in, width_out)),
            "b": np.zeros(width_out),
        }
        self.state: dict[str, np.ndarray] = {}

    def forward(self, x, mode, rng):
        if x.shape[1] != self.width_in:
            raise ValueError(f"affine expects width {self.width_in}, got {x.shape[1]}")
        return x @ self.params["w"] + self.params["b"], x

    def backward(self, cache, grad):
        x = cache
        return grad @ self.params["w"].T, {"w": x.T @ grad, "b": grad.sum(axis=0)}


class BatchNorm:
    """Per-feature batch normalization with running statistics for eval mode.

    ``bypass_below`` turns the layer into an identity for train-mode batches
    smaller than the given row count (0 disables the bypass).
    """

    kind = "batchnorm"

    def __init__(self, width: int, momentum: float = 0.9, eps: float = 1e-5, bypass_below: int = 0):
        self.width = width
        self.momentum = momentum
        self.eps = eps
        self.bypass_below = bypass_below
        self.params = {"gamma": np.ones(width), "beta": np.zeros(width)}
        self.state = {"running_mean": np.zeros(width), "running_var": np.ones(width)}

    def forward(self, x, mode, rng):
        if x.shape[1] != self.width:
            raise ValueError(f"batchnorm expects width {self.width}, got {x.shape[1]}")
        if mode == "train":
            if self.bypass_below and x.shape[0] < self.bypass_below:
                return x, ("bypass",)
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu) * inv_std
            m = self.momentum
            self.state["running_mean"] = m * self.state["running_mean"] + (1 - m) * mu
            self.state["running_var"] = m * self.state["running_var"] + (1 - m) * var
            return self.params["gamma"] * xhat + self.params["beta"], ("train", xhat, inv_std)
        inv_std = 1.0 / np.sqrt(self.state["running_var"] + self.eps)
        xhat = (x - self.state["running_mean"]) * inv_std
        return self.params["gamma"] * xhat + self.params["beta"], ("eval", xhat, inv_std)

    def backward(self, cache, grad):
        zero = {"gamma": np.zeros(self.width), "beta": np.zeros(self.width)}
        if cache[0] == "bypass":
            return grad, zero
        _, xhat, inv_std = cache
        dgamma = (grad * xhat).sum(axis=0)
        dbeta = grad.sum(axis=0)
        dxhat = grad * self.params["gamma"]
        if cache[0] == "eval":
            return dxhat * inv_std, {"gamma": dgamma, "beta": dbeta}
        n = grad.shape[0]
        dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        return dx, {"gamma": dgamma, "beta": dbeta}


class LeakyReLU:
    kind = "leakyrelu"

    def __init__(self, slope: float = 0.2):
        if slope < 0:
            raise ValueError(f"slope must be >= 0, got {slope}")
        self.slope = slope
        self.params: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}

    def forward(self, x, mode, rng):
        keep = x >= 0.0
        return np.where(keep, x, self.slope * x), keep

    def backward(self, cache, grad):
        return np.where(cache, grad, self.slope * grad), {}


class Dropout:
    """Inverted dropout: train-mode activations are masked and rescaled by
    1/keep_prob so eval mode is a plain identity."""

    kind = "dropout"

    def __init__(self, keep_prob: float):
        if not 0.0 < keep_prob <= 1.0:
            raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
        self.keep_prob = keep_prob
        self.params: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}

    def forward(self, x, mode, rng):
        if mode != "train" or self.keep_prob == 1.0:
            return x, None
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        mask = rng.random(x.shape) < self.keep_prob
        return x * mask / self.keep_prob, mask

    def backward(self, cache, grad):
        if cache is None:
            return grad, {}
        return grad * cache / self.keep_prob, {}


@dataclass
class Tape:
    stack: "Stack"
    mode: str
    caches: list


class Stack:
    """A fixed feed-forward chain of layers differentiated as one unit."""

    def __init__(self, layers: list):
        self.layers = layers

    def forward(self, x, mode: str = "train", rng: np.random.Generator | None = None):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"stack input must be 2-d, got shape {x.shape}")
        caches = []
        for i, layer in enumerate(self.layers):
            try:
                x, cache = layer.forward(x, mode, rng)
            except ValueError as exc:
                raise ValueError(f"layer {i} ({layer.kind}): {exc}") from None
            caches.append(cache)
        _check_finite("stack output", x)
        return x, Tape(stack=self, mode=mode, caches=caches)

    def backward(self, tape: Tape, grad):
        """Gradients for every parameter plus the gradient w.r.t. the input."""
        if tape.stack is not self:
            raise ValueError("tape was recorded by a different stack")
        if len(tape.caches) != len(self.layers):
            raise ValueError("stale tape: layer count changed since forward")
        grad = np.asarray(grad, dtype=np.float64)
        grads: list[dict[str, np.ndarray]] = [None] * len(self.layers)  # type: ignore[list-item]
        for i in range(len(self.layers) - 1, -1, -1):
            grad, g = self.layers[i].backward(tape.caches[i], grad)
            grads[i] = g
        _check_finite("stack input grad", grad)
        return grad, grads

    def param_items(self, prefix: str = ""):
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                yield f"{prefix}{i}.{name}", arr

    def state_items(self, prefix: str = ""):
        for i, layer in enumerate(self.layers):
            for name, arr in layer.state.items():
                yield f"{prefix}{i}.{name}", arr

    def grad_items(self, grads: list, prefix: str = ""):
        for i, g in enumerate(grads):
            for name, arr in g.items():
                yield f"{prefix}{i}.{name}", arr


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray, reduction: str = "mean"):
    """Softmax cross-entropy over class-index labels; returns (loss, dlogits)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    p = softmax(logits)
    losses = -np.log(p[np.arange(n), labels])
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    if reduction == "mean":
        return float(losses.mean()), grad / n
    if reduction == "sum":
        return float(losses.sum()), grad
    raise ValueError(f"unknown reduction {reduction!r}")


def mse(pred: np.ndarray, targets: np.ndarray, reduction: str = "mean"):
    """Mean squared error; returns (loss, dpred)."""
    pred = np.asarray(pred, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).reshape(pred.shape)
    diff = pred - targets
    if reduction == "mean":
        return float((diff**2).mean()), 2.0 * diff / diff.size
    if reduction == "sum":
        return float((diff**2).sum()), 2.0 * diff
    raise ValueError(f"unknown reduction {reduction!r}")


class Adam:
    """Bias-corrected Adam over a dict of named parameter arrays (in place)."""

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step
        c2 = 1.0 - b2**self.step
        for key, p in params.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(p)
            elif g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {key}")
            m = self.m.setdefault(key, np.zeros_like(p))
            v = self.v.setdefault(key, np.zeros_like(p))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            denom = np.sqrt(v / c2)
            denom += self.eps
            np.divide(m, denom, out=denom)
            denom *= self.lr / c1
            p -= denom


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Binary dump of named arrays plus a JSON metadata record (bit-exact)."""
    if "__meta__" in arrays:
        raise ValueError("'__meta__' is a reserved key")
    np.savez(path, __meta__=np.asarray(json.dumps(meta)), **arrays)


def load_arrays(path):
    with np.load(path, allow_pickle=False) as npz:
        meta = json.loads(str(npz["__meta__"]))
        arrays = {k: npz[k] for k in npz.files if k != "__meta__"}
    return arrays, meta
