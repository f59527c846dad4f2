"""Adam with decoupled weight decay and cosine annealing with warm restarts."""
from __future__ import annotations

import math

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


class AdamW:
    """Bias-corrected Adam; weight decay shrinks weights directly
    (w <- w * (1 - lr * wd)) instead of being added to the gradient."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.95, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        for name, v in (("lr", lr), ("eps", eps)):
            if not v > 0:
                raise ValueError(f"{name} must be > 0, got {v}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        if weight_decay < 0:
            raise ValueError(f"weight decay must be >= 0, got {weight_decay}")
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps, self.weight_decay = lr, beta1, beta2, eps, weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        bad = [k for k, p in self.params.items() if p.grad is not None and not np.all(np.isfinite(p.grad))]
        if bad:
            raise NonFiniteGradient(f"non-finite gradient in {', '.join(sorted(bad)[:5])}; step aborted")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if self.weight_decay:
                p.data *= (1 - lr * self.weight_decay)
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype, copy=False)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}


def cosine_lr(step: float, cycle: float, lr_max: float, lr_min: float = 0.0) -> float:
    if not 0 <= step < cycle:
        raise ValueError(f"step {step} outside cycle [0, {cycle})")
    return lr_min + (lr_max - lr_min) * (1 + math.cos(math.pi * step / cycle)) / 2


def restart_epochs(t0: float, mult: float, until: float) -> list:
    """Epochs at which a new cycle begins (excluding 0), up to ``until``."""
    out, start, length = [], 0.0, float(t0)
    while start + length <= until:
        start += length
        out.append(start)
        length *= mult
    return out


def cycle_position(epoch: float, t0: float, mult: float) -> tuple:
    """(position within the current cycle, cycle length) for a fractional epoch."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    start, length = 0.0, float(t0)
    while epoch >= start + length:
        start += length
        length *= mult
    return epoch - start, length


def lr_at(epoch: float, lr_max: float, t0: float = 10, mult: float = 2, lr_min: float = 0.0) -> float:
    pos, length = cycle_position(epoch, t0, mult)
    return cosine_lr(pos, length, lr_max, lr_min)
