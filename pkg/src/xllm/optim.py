"""AdamW with decoupled weight decay, global-norm clipping and a warmup-plus-cosine schedule."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError
from .tensor import Parameter


@dataclass
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.98
    weight_decay: float = 0.05
    eps: float = 1e-8
    accumulation: int = 1
    clip_norm: float | None = 1.0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie strictly between 0 and 1")
        if self.weight_decay < 0 or self.eps <= 0:
            raise ConfigurationError("weight_decay must be >= 0 and eps > 0")
        if self.accumulation < 1:
            raise ConfigurationError("accumulation must be at least 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigurationError("clip_norm must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ScheduleConfig:
    init_lr: float
    min_lr: float
    warmup_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if min(self.init_lr, self.min_lr, self.warmup_lr) < 0:
            raise ConfigurationError("learning rates must be non-negative")
        if self.warmup_steps < 0 or self.total_steps < 1:
            raise ConfigurationError("need warmup_steps >= 0 and total_steps >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def lr_at(step: int, schedule: ScheduleConfig) -> float:
    """Linear warmup from ``warmup_lr`` to ``init_lr``, then cosine decay reaching ``min_lr`` at the last step."""
    if step < 0:
        raise ConfigurationError("step must be non-negative")
    s = schedule
    if step < s.warmup_steps:
        return s.warmup_lr + (s.init_lr - s.warmup_lr) * step / s.warmup_steps
    span = s.total_steps - 1 - s.warmup_steps
    if span <= 0:
        return s.init_lr if step == s.warmup_steps else s.min_lr
    progress = min((step - s.warmup_steps) / span, 1.0)
    return s.min_lr + 0.5 * (s.init_lr - s.min_lr) * (1.0 + math.cos(math.pi * progress))


def global_norm(params: list[Parameter]) -> float:
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None))


class AdamW:
    """Adam moments with decoupled decay applied to matrices only (biases and norms are exempt)."""

    def __init__(self, params: list[Parameter], cfg: OptimizerConfig):
        self.params = list(params)
        self.cfg = cfg
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> float:
        """Apply one update; returns the pre-clipping gradient norm."""
        cfg = self.cfg
        norm = global_norm(self.params)
        scale = 1.0
        if cfg.clip_norm is not None and norm > cfg.clip_norm:
            scale = cfg.clip_norm / (norm + 1e-12)
        self.t += 1
        b1, b2 = cfg.beta1, cfg.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad * scale
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if cfg.weight_decay and p.data.ndim >= 2:
                p.data *= 1.0 - lr * cfg.weight_decay
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        return norm

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}
