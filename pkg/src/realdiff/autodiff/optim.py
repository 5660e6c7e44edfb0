"""Bias-corrected adaptive-moment optimizer and gradient clipping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, DimensionError
from .tensor import Tensor


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: OptimizerState) -> None:
    """Apply one update in place.  Parameters without a gradient are left alone."""
    if state.lr < 0:
        raise ContractError("learning rate must be non-negative")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"adam: grad {list(g.shape)} vs param {name} {list(p.shape)}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        k = max_norm / total
        for g in grads.values():
            g *= k
    return total


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, clip: float | None = 1.0):
        self.params = params
        self.state = OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
        self.clip = clip

    def step(self, grads: dict[str, np.ndarray]) -> float:
        grads = {k: np.array(g) for k, g in grads.items()}
        norm = clip_grad_norm(grads, self.clip) if self.clip else 0.0
        adam_step(self.params, grads, self.state)
        return norm
