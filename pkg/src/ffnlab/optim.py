"""AdamW with decoupled weight decay and a linear-warmup cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ffnlab.autograd import Tensor


class NonFiniteGradientError(FloatingPointError):
    """Raised when a loss or gradient is NaN/inf (vanishing/exploding gradient)."""


@dataclass
class TrainSchedule:
    max_lr: float = 1.5e-4
    warmup_steps: int = 300
    total_steps: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float = 0.0  # 0 disables clipping

    def validate(self) -> None:
        if self.max_lr <= 0:
            raise ValueError("max_lr must be positive")
        if self.warmup_steps <= 0:
            raise ValueError("warmup_steps must be positive")
        if self.total_steps is not None and self.warmup_steps > self.total_steps:
            raise ValueError(
                f"warmup_steps={self.warmup_steps} exceeds total_steps={self.total_steps}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must be in [0, 1)")
        if self.weight_decay < 0 or self.clip_norm < 0:
            raise ValueError("weight_decay and clip_norm must be >= 0")


def lr_at_step(schedule: TrainSchedule, step: int) -> float:
    """Linear warmup to ``max_lr``, then half-cosine down to zero at ``total_steps``."""
    total = schedule.total_steps
    if total is None:
        raise ValueError("schedule.total_steps is not set")
    if not 1 <= step <= total:
        raise ValueError(f"step {step} outside [1, {total}]")
    w = schedule.warmup_steps
    if step <= w:
        return schedule.max_lr * step / w
    progress = (step - w) / (total - w)
    return schedule.max_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def decays(name: str, param: Tensor) -> bool:
    """Weight decay applies to matrices only; biases and norm affines are exempt."""
    return param.data.ndim >= 2


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamWState,
               lr: float, schedule: TrainSchedule) -> None:
    """Update ``params`` in place. Rejects the whole step on any non-finite gradient."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    for name, p in params.items():
        g = grads.get(name)
        if g is not None and g.shape != p.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
    bad = [n for n, g in grads.items() if g is not None and not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(
            f"non-finite gradient at step {state.step + 1} in {bad[:3]}"
            " (vanishing/exploding gradient)")

    scale = 1.0
    if schedule.clip_norm > 0:
        norm = global_grad_norm({k: g for k, g in grads.items() if g is not None})
        if norm > schedule.clip_norm:
            scale = schedule.clip_norm / (norm + 1e-12)

    state.step += 1
    t = state.step
    b1, b2 = schedule.beta1, schedule.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif scale != 1.0:
            g = g * p.dtype.type(scale)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if schedule.weight_decay and decays(name, p):
            p.data *= p.dtype.type(1.0 - lr * schedule.weight_decay)
        denom = np.sqrt(v / bc2) + schedule.eps
        p.data -= (lr / bc1) * m / denom
