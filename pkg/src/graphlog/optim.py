"""Adam and the step-decay learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(
            m=[np.zeros_like(p.values) for p in self.params],
            v=[np.zeros_like(p.values) for p in self.params],
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = float(value)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        s = self.state
        if ad.is_strict():
            for i, p in enumerate(self.params):
                if not np.all(np.isfinite(p.grad)):
                    raise ad.NumericError(f"non-finite gradient in parameter {p.name or i}")
        s.step += 1
        c1 = 1.0 - s.beta1 ** s.step
        c2 = 1.0 - s.beta2 ** s.step
        for p, m, v in zip(self.params, s.m, s.v):
            g = p.grad
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * g * g
            p.values -= s.lr * (m / c1) / (np.sqrt(v / c2) + s.eps)


def lr_schedule(epoch: int, base_lr: float, mode: str = "finetune", gamma: float = 0.3, step_size: int = 30) -> float:
    """Step decay for fine-tuning; constant during pre-training."""
    if mode == "pretrain":
        return base_lr
    if mode != "finetune":
        raise ValueError(f"unknown schedule mode {mode!r}")
    return base_lr * gamma ** math.floor(epoch / step_size)
