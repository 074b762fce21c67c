"""Optimizers and the warmup-then-cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError


@dataclass(frozen=True)
class ScheduleConfig:
    base_lr: float = 7e-4
    final_lr: float = 7e-7
    warmup_factor: float = 0.1
    warmup_epochs: int = 1
    total_epochs: int = 40

    def __post_init__(self):
        if not (0 < self.final_lr <= self.base_lr):
            raise ConfigError("require 0 < final_lr <= base_lr")
        if not (0 < self.warmup_factor <= 1):
            raise ConfigError("require 0 < warmup_factor <= 1")
        if self.warmup_epochs < 0 or self.total_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.total_epochs and self.warmup_epochs > self.total_epochs:
            raise ConfigError("warmup_epochs cannot exceed total_epochs")


def lr_at(schedule: ScheduleConfig, epoch_fraction: float) -> float:
    """Learning rate at a point of training, ``epoch_fraction`` in [0, 1].

    Linear ramp from ``warmup_factor * base_lr`` to ``base_lr`` over the
    warmup span, then cosine decay from ``base_lr`` to ``final_lr``.
    """
    if not (0.0 <= epoch_fraction <= 1.0):
        raise ValueError(f"epoch_fraction must lie in [0, 1], got {epoch_fraction}")
    span = (schedule.warmup_epochs / schedule.total_epochs
            if schedule.total_epochs > 0 else 0.0)
    if span > 0 and epoch_fraction < span:
        ramp = epoch_fraction / span
        return schedule.base_lr * (schedule.warmup_factor + (1 - schedule.warmup_factor) * ramp)
    if span >= 1.0:
        return schedule.base_lr
    u = (epoch_fraction - span) / (1.0 - span)
    cos = 0.5 * (1.0 + math.cos(math.pi * u))
    return schedule.final_lr + (schedule.base_lr - schedule.final_lr) * cos


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params: Sequence[Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if not p.requires_grad or p.grad is None:
                continue
            g = p.grad
            m, v = self.m[i], self.v[i]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            denom = np.sqrt(v / b2c)
            denom += self.eps
            p.data = p.data - (lr / b1c) * m / denom


class SGD:
    """Plain gradient descent, exposed as the alternative optimizer choice."""

    def __init__(self, params: Sequence[Tensor]) -> None:
        self.params = list(params)
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        for p in self.params:
            if not p.requires_grad or p.grad is None:
                continue
            p.data = p.data - lr * p.grad


def make_optimizer(name: str, params: Sequence[Tensor]):
    if name == "adam":
        return Adam(params)
    if name == "sgd":
        return SGD(params)
    raise ConfigError(f"unknown optimizer {name!r}")
