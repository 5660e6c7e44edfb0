"""Full-batch gradient training loop shared by every model family."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import Adam, Tape, Tensor
from .errors import DivergenceError


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)


def fit(params: dict[str, Tensor], loss_fn: Callable[[int], Tensor], epochs: int, lr: float = 1e-3,
        clip: float | None = 1.0, val_fn: Callable[[], float] | None = None,
        history: History | None = None) -> History:
    """One optimizer step per epoch on ``loss_fn(epoch)``.

    The recorded training loss is the one evaluated before that epoch's step;
    the validation loss (if ``val_fn`` is given) is evaluated after it.
    """
    hist = history if history is not None else History()
    if epochs <= 0:
        return hist
    opt = Adam(params, lr=lr, clip=clip)
    for epoch in range(epochs):
        with Tape() as tape:
            loss = loss_fn(epoch)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(
                    f"training loss is {value} at epoch {epoch}; lower the learning rate or clip harder",
                    step=epoch)
            grads = tape.backward(loss).for_params(params)
        opt.step(grads)
        hist.train_loss.append(value)
        if val_fn is not None:
            hist.val_loss.append(float(val_fn()))
    return hist
