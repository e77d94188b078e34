"""Small dense-network kernel with hand-written gradients.

Arrays are float64 numpy arrays; batches run along axis 0. Parameterized
pieces keep their tensors in a ``params`` dict and, after ``backward``, the
matching gradients in ``grads`` so optimizers and :func:`grad_check` can
treat every model uniformly.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

from .errors import ShapeMismatch, UsageError

CHECKPOINT_VERSION = 1


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape if shape is not None else (fan_out, fan_in))


# activations; each backward takes the forward input and the upstream gradient

def sigmoid(x):
    return expit(x)


def sigmoid_backward(x, dy):
    s = expit(x)
    return dy * s * (1.0 - s)


def tanh(x):
    return np.tanh(x)


def tanh_backward(x, dy):
    t = np.tanh(x)
    return dy * (1.0 - t * t)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, dy):
    return dy * (x > 0)


ACTIVATIONS = {
    "sigmoid": (sigmoid, sigmoid_backward),
    "tanh": (tanh, tanh_backward),
    "relu": (relu, relu_backward),
    "linear": (lambda x: x, lambda x, dy: dy),
}


class Dense:
    """Affine map ``y = x W^T + b`` with W of shape (out, in)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {"W": glorot_uniform(rng, n_in, n_out), "b": np.zeros(n_out)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._x = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.params["W"].shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.params["W"].shape[1]:
            raise ShapeMismatch(f"dense expects {self.params['W'].shape[1]} inputs, got {x.shape[-1]}")
        self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, dy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(dx, dW, db)`` and store dW, db in ``grads``."""
        if self._x is None:
            raise UsageError("backward called before forward")
        dy = np.asarray(dy, dtype=float)
        x2 = self._x.reshape(-1, self._x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        if dy2.shape[0] != x2.shape[0] or dy2.shape[1] != self.params["W"].shape[0]:
            raise ShapeMismatch("upstream gradient does not match the forward output")
        dW = dy2.T @ x2
        db = dy2.sum(axis=0)
        self.grads["W"], self.grads["b"] = dW, db
        dx = dy @ self.params["W"]
        return dx, dW, db


def dense_forward(layer: Dense, x):
    return layer.forward(x)


def dense_backward(layer: Dense, dy):
    return layer.backward(dy)


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def bce_loss(logit, target, weight=None) -> tuple[float, np.ndarray]:
    """Binary cross-entropy on logits, mean over elements, optional per-element weights."""
    z = np.asarray(logit, dtype=float)
    t = np.asarray(target, dtype=float)
    if z.shape != t.shape:
        raise ShapeMismatch(f"bce: {z.shape} vs {t.shape}")
    w = np.ones_like(z) if weight is None else np.broadcast_to(np.asarray(weight, float), z.shape)
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    return float(np.sum(w * per) / n), w * (expit(z) - t) / n


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: dict,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> dict:
    """One in-place Adam update with bias correction; ``state`` starts as ``{}``."""
    t = state.get("t", 0) + 1
    state["t"] = t
    m = state.setdefault("m", {})
    v = state.setdefault("v", {})
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {name}: {g.shape} vs {p.shape}")
        if name not in m:
            m[name] = np.zeros_like(p)
            v[name] = np.zeros_like(p)
        m[name] = beta1 * m[name] + (1 - beta1) * g
        v[name] = beta2 * v[name] + (1 - beta2) * g * g
        m_hat = m[name] / (1 - beta1**t)
        v_hat = v[name] / (1 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state: dict = {}

    def step(self, params, grads):
        adam_step(params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)


def grad_check(f: Callable[[], float], params: Mapping[str, np.ndarray],
               grads: Mapping[str, np.ndarray], eps: float = 1e-5) -> float:
    """Largest relative error between analytic ``grads`` and central differences of ``f``.

    ``f`` re-evaluates the objective from the current contents of ``params``,
    which are perturbed in place and restored.
    """
    worst = 0.0
    for name, p in params.items():
        g = grads[name]
        flat = p.reshape(-1)
        gflat = np.asarray(g, dtype=float).reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp = f()
            flat[i] = old - eps
            fm = f()
            flat[i] = old
            num = (fp - fm) / (2 * eps)
            a = gflat[i]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    """Named float64 tensors as JSON; values round-trip exactly through ``repr``."""
    doc = {
        "format": "gridguard-checkpoint",
        "version": CHECKPOINT_VERSION,
        "meta": dict(meta or {}),
        "tensors": {k: {"shape": list(np.shape(v)), "data": np.asarray(v, float).ravel().tolist()}
                    for k, v in sorted(tensors.items())},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "gridguard-checkpoint" or doc.get("version") != CHECKPOINT_VERSION:
        raise UsageError(f"{path}: unsupported checkpoint")
    tensors = {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in doc["tensors"].items()}
    return tensors, doc["meta"]
