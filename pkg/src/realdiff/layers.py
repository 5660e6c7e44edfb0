"""Parameter initialization and the small dense building blocks shared by models."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, ops


def uniform_weight(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def dense(rng: np.random.Generator, n_in: int, n_out: int) -> tuple[Tensor, Tensor]:
    """Weight [n_in, n_out] uniform in +-1/sqrt(n_in), zero bias."""
    return uniform_weight(rng, n_in, (n_in, n_out)), zeros(n_out)


def mlp(x: Tensor, layers: list[tuple[Tensor, Tensor]], final=None) -> Tensor:
    """relu between layers; ``final`` (e.g. ``ops.tanh``) after the last one."""
    for i, (w, b) in enumerate(layers):
        x = ops.linear(x, w, b)
        if i < len(layers) - 1:
            x = ops.relu(x)
    return final(x) if final is not None else x


def copy_tensor(t: Tensor) -> Tensor:
    return Tensor(t.data.copy(), requires_grad=t.requires_grad)
