"""Optimizers over named parameter arrays, with optional per-weight masks.

A mask multiplies the final step, so ``mask == 0`` leaves the weight
bit-identical whatever the optimizer state holds.
"""
from __future__ import annotations

import numpy as np


def _keep_frozen(old, new, masks, k):
    # w - 0.0 turns -0.0 into +0.0, so frozen entries are copied back
    if masks is None or k not in masks:
        return new
    return np.where(masks[k] == 0, old, new)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict, grads: dict, masks: dict | None = None):
        for k, g in grads.items():
            d = g if masks is None or k not in masks else masks[k] * g
            params[k] = _keep_frozen(params[k], params[k] - self.lr * d, masks, k)


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict, masks: dict | None = None):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m = self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            v = self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            d = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if masks is not None and k in masks:
                d = masks[k] * d
            params[k] = _keep_frozen(params[k], params[k] - self.lr * d, masks, k)


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")
