"""Optimizers: SGD with momentum and Adam, both with additive weight decay.

Weight decay can be restricted to a subset of output rows via per-layer decay
row masks.  Parameters whose gradient and decay are both zero are left
bit-identical, which is what makes the partial-compression and full-width
training paths produce the same trajectories.
"""

from __future__ import annotations

import numpy as np

from .nn import DenseLayer


class DivergenceError(RuntimeError):
    """Raised when training produces non-finite losses or gradients."""


def _check_finite(grads) -> None:
    for g_w, g_b in grads:
        if not np.isfinite(g_w).all() or not np.isfinite(g_b).all():
            raise DivergenceError("non-finite gradient")


def _decayed(layer: DenseLayer, g_w, g_b, weight_decay: float, row_mask):
    if weight_decay == 0.0:
        return g_w, g_b
    if row_mask is None:
        return g_w + weight_decay * layer.weight, g_b + weight_decay * layer.bias
    g_w = g_w + weight_decay * (layer.weight * row_mask[:, None])
    g_b = g_b + weight_decay * (layer.bias * row_mask)
    return g_w, g_b


class SgdMomentum:
    """v <- momentum * v + (g + wd * theta); theta <- theta - lr * v."""

    def __init__(self, layers: list[DenseLayer], lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [
            (np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in layers
        ]

    def step(self, layers: list[DenseLayer], grads, decay_row_masks=None) -> None:
        _check_finite(grads)
        for i, (layer, (g_w, g_b)) in enumerate(zip(layers, grads)):
            mask = None if decay_row_masks is None else decay_row_masks[i]
            d_w, d_b = _decayed(layer, g_w, g_b, self.weight_decay, mask)
            v_w, v_b = self.velocity[i]
            v_w *= self.momentum
            v_w += d_w
            v_b *= self.momentum
            v_b += d_b
            layer.weight -= self.lr * v_w
            layer.bias -= self.lr * v_b

    def state_dict(self) -> dict:
        return {
            "velocity": [[v_w.copy(), v_b.copy()] for v_w, v_b in self.velocity],
        }

    def load_state_dict(self, state: dict) -> None:
        self.velocity = [(np.asarray(v[0]), np.asarray(v[1])) for v in state["velocity"]]


class Adam:
    """Bias-corrected Adam with the same additive weight-decay convention."""

    def __init__(self, layers: list[DenseLayer], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in layers]
        self.v = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in layers]

    def step(self, layers: list[DenseLayer], grads, decay_row_masks=None) -> None:
        _check_finite(grads)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, (layer, (g_w, g_b)) in enumerate(zip(layers, grads)):
            mask = None if decay_row_masks is None else decay_row_masks[i]
            d_w, d_b = _decayed(layer, g_w, g_b, self.weight_decay, mask)
            m_w, m_b = self.m[i]
            v_w, v_b = self.v[i]
            m_w *= self.beta1
            m_w += (1.0 - self.beta1) * d_w
            m_b *= self.beta1
            m_b += (1.0 - self.beta1) * d_b
            v_w *= self.beta2
            v_w += (1.0 - self.beta2) * d_w ** 2
            v_b *= self.beta2
            v_b += (1.0 - self.beta2) * d_b ** 2
            layer.weight -= self.lr * (m_w / c1) / (np.sqrt(v_w / c2) + self.eps)
            layer.bias -= self.lr * (m_b / c1) / (np.sqrt(v_b / c2) + self.eps)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": [[m_w.copy(), m_b.copy()] for m_w, m_b in self.m],
            "v": [[v_w.copy(), v_b.copy()] for v_w, v_b in self.v],
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = [(np.asarray(p[0]), np.asarray(p[1])) for p in state["m"]]
        self.v = [(np.asarray(p[0]), np.asarray(p[1])) for p in state["v"]]


def make_optimizer(kind: str, layers: list[DenseLayer], *, lr: float,
                   momentum: float = 0.9, weight_decay: float = 0.0,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    if kind == "sgd":
        return SgdMomentum(layers, lr=lr, momentum=momentum, weight_decay=weight_decay)
    if kind == "adam":
        return Adam(layers, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                    weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer {kind!r}")
