"""AdamW with decoupled weight decay and a reduce-on-plateau learning-rate rule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .tensor import Tensor


@dataclass
class AdamWConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class AdamWState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: Dict[str, Tensor], state: AdamWState, cfg: AdamWConfig, lr=None):
    """One AdamW update on every parameter with a gradient. Mutates ``params`` and ``state``."""
    lr = cfg.lr if lr is None else lr
    state.step += 1
    t = state.step
    bc1 = 1 - cfg.beta1 ** t
    bc2 = 1 - cfg.beta2 ** t
    for name in sorted(params):
        p = params[name]
        if p.grad is None:
            continue
        g = p.grad.astype(p.data.dtype, copy=False)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * g * g
        if cfg.weight_decay:
            p.data *= 1 - lr * cfg.weight_decay
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


class AdamW:
    def __init__(self, params: Dict[str, Tensor], cfg: AdamWConfig = None):
        self.params = params
        self.cfg = cfg or AdamWConfig()
        self.state = AdamWState()
        self.lr = self.cfg.lr

    def step(self):
        optimizer_step(self.params, self.state, self.cfg, lr=self.lr)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


@dataclass
class PlateauConfig:
    factor: float = 0.5
    patience: int = 2
    min_delta: float = 1e-4
    lr_min: float = 1e-6


@dataclass
class PlateauState:
    best: float = float("inf")
    bad_epochs: int = 0


def lr_on_plateau(loss: float, lr: float, state: PlateauState, cfg: PlateauConfig) -> float:
    """Feed one epoch's validation loss; returns the learning rate for the next epoch."""
    if loss < state.best - cfg.min_delta:
        state.best = loss
        state.bad_epochs = 0
        return lr
    state.bad_epochs += 1
    if state.bad_epochs > cfg.patience:
        state.bad_epochs = 0
        return max(lr * cfg.factor, cfg.lr_min)
    return lr
