"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import ContractError
from .tensor import Tape, Tensor


def grad_check_params(loss_fn: Callable[[], Tensor], params: dict[str, Tensor] | list[Tensor],
                      eps: float = 1e-5) -> float:
    """Max relative error of the tape gradient of ``loss_fn()`` w.r.t. ``params``.

    Relative error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    ``loss_fn`` must read parameter values at call time; the check perturbs
    ``param.data`` in place and restores it.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"eps={eps} outside [1e-7, 1e-3]")
    plist = list(params.values()) if isinstance(params, dict) else list(params)
    flags = [p.requires_grad for p in plist]
    for p in plist:
        p.requires_grad = True
    try:
        with Tape() as tape:
            loss = loss_fn()
            grads = tape.backward(loss)
            analytic = [grads[p].copy() for p in plist]
        worst = 0.0
        for p, a in zip(plist, analytic):
            flat = p.data.reshape(-1)
            af = a.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                hi, lo = orig + eps, orig - eps
                flat[i] = hi
                up = loss_fn().item()
                flat[i] = lo
                down = loss_fn().item()
                flat[i] = orig
                num = (up - down) / (hi - lo)  # realized step, free of rounding in orig +- eps
                worst = max(worst, abs(af[i] - num) / max(1.0, abs(af[i])))
        return worst
    finally:
        for p, f in zip(plist, flags):
            p.requires_grad = f


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor | np.ndarray, eps: float = 1e-5) -> float:
    """Check the gradient of scalar ``f`` with respect to its single argument."""
    xt = Tensor(x.data if isinstance(x, Tensor) else x)
    return grad_check_params(lambda: f(xt), [xt], eps)
