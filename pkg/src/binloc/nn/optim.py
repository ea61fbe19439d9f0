"""Adam optimiser with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, values, **kw) -> "AdamState":
        return cls([np.zeros_like(v) for v in values], [np.zeros_like(v) for v in values], **kw)


def adam_step(params: list, grads: list, state: AdamState, lr: float) -> None:
    """Apply one in-place Adam update to the arrays in ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and Adam moments must have the same length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient passed to adam_step")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch in adam_step: param {p.shape}, grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)).astype(p.dtype, copy=False)


class Adam:
    """Adam over a list of :class:`~binloc.nn.layers.Parameter`."""

    def __init__(self, parameters, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.parameters = list(parameters)
        self.lr = lr
        self.state = AdamState.for_params(
            [p.value for p in self.parameters], beta1=betas[0], beta2=betas[1], eps=eps
        )

    def step(self):
        adam_step([p.value for p in self.parameters], [p.grad for p in self.parameters],
                  self.state, self.lr)

    def zero_grad(self):
        for p in self.parameters:
            p.zero_grad()
