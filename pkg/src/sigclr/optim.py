"""LARS with momentum, plus warmup + cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fnmatch import fnmatch
from typing import Dict, Tuple

import numpy as np


class DivergenceError(FloatingPointError):
    """Non-finite values reached the optimizer."""


@dataclass
class OptimizerConfig:
    base_lr: float = 0.3
    momentum: float = 0.9
    weight_decay: float = 1e-6
    trust_coefficient: float = 0.001
    eps: float = 1e-9
    # glob patterns; matching tensors skip trust scaling and weight decay
    lars_excluded: Tuple[str, ...] = ("*.bias", "loss.*")
    warmup_epochs: float = 10
    total_epochs: float = 1000
    batch_size: int = 64
    reference_batch: int = 64

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.warmup_epochs < 0 or self.warmup_epochs > self.total_epochs:
            raise ValueError("need 0 <= warmup_epochs <= total_epochs")

    @property
    def scaled_lr(self) -> float:
        return self.base_lr * self.batch_size / self.reference_batch

    def is_excluded(self, name: str) -> bool:
        return any(fnmatch(name, pat) for pat in self.lars_excluded)


def lr_at(config: OptimizerConfig, epoch: float) -> float:
    """Learning rate at a (fractional) epoch: linear warmup from 0, then
    cosine decay to 0 at ``total_epochs``."""
    if not 0 <= epoch <= config.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.total_epochs}]")
    peak = config.scaled_lr
    warm = config.warmup_epochs
    if warm > 0 and epoch < warm:
        return peak * epoch / warm
    span = config.total_epochs - warm
    if span <= 0:
        return peak
    progress = (epoch - warm) / span
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def _norm(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    return math.sqrt(np.cumsum(a * a)[-1]) if a.size else 0.0


@dataclass
class Lars:
    config: OptimizerConfig
    momentum_buffers: Dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: float) -> None:
        """Update ``params`` in place."""
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        cfg = self.config
        for name, g in grads.items():
            w = params[name]
            if g.shape != w.shape:
                raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {w.shape}")
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient for {name}")
            if cfg.is_excluded(name):
                step = lr * g
            else:
                w_norm = _norm(w)
                g_norm = _norm(g)
                local_lr = cfg.trust_coefficient * w_norm / (g_norm + cfg.weight_decay * w_norm + cfg.eps)
                step = lr * local_lr * (g + cfg.weight_decay * w)
            buf = self.momentum_buffers.get(name)
            buf = step if buf is None else cfg.momentum * buf + step
            buf = np.asarray(buf, dtype=w.dtype)
            self.momentum_buffers[name] = buf
            params[name] = w - buf


def lars_step(params, grads, config: OptimizerConfig, lr: float, state: Lars = None):
    """Functional wrapper: returns updated copies and the optimizer state."""
    state = state or Lars(config)
    new = {k: np.array(v, copy=True) for k, v in params.items()}
    state.step(new, grads, lr)
    return new, state
