"""Adadelta with a learning-rate multiplier."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdadeltaState:
    lr: float = 0.1
    decay: float = 0.95
    eps: float = 1e-6
    sq_grad: dict = field(default_factory=dict)
    sq_update: dict = field(default_factory=dict)


def adadelta_step(params, grads, state):
    """Apply one Adadelta update in place and return ``(params, state)``.

    Only parameters present in ``grads`` move. The squared-update accumulator
    tracks the unscaled step, so ``lr`` acts purely as an output multiplier.
    """
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        eg = state.sq_grad.get(name)
        if eg is None:
            eg = state.sq_grad[name] = np.zeros_like(p)
            state.sq_update[name] = np.zeros_like(p)
        ed = state.sq_update[name]
        eg *= state.decay
        eg += (1.0 - state.decay) * g * g
        step = np.sqrt(ed + state.eps) / np.sqrt(eg + state.eps) * g
        ed *= state.decay
        ed += (1.0 - state.decay) * step * step
        p -= state.lr * step
    return params, state


class Adadelta:
    """Stateful wrapper binding an :class:`AdadeltaState` to one parameter dict."""

    def __init__(self, params, lr=0.1, decay=0.95, eps=1e-6):
        self.params = params
        self.state = AdadeltaState(lr=lr, decay=decay, eps=eps)

    def step(self, grads):
        adadelta_step(self.params, grads, self.state)
