"""Finite-difference checks of every differentiable op and three composed graphs.

Each op is reduced to a scalar through a fixed random weighting so every
output coordinate contributes to the checked gradient.
"""
from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from .autodiff import Tensor, grad_check_params, ops
from .cde import CdeParams, solve_cde
from .fusion import FusionParams, fusion_block_forward
from .lstm import LstmLayer, lstm_cell
from .paths import ObservationSequence, build_path

OP_TOL = 1e-5
CDE_TOL = 1e-4
EPS = 1e-5


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def op_cases(rng) -> dict[str, tuple[Callable[..., Tensor], list[np.ndarray]]]:
    """name -> (fn of input tensors, input arrays)."""
    n = lambda *s: rng.normal(size=s)  # noqa: E731
    mask = np.tril(np.ones((3, 3), dtype=bool))
    return {
        "add": (ops.add, [n(3, 4), n(3, 4)]),
        "sub": (ops.sub, [n(3, 4), n(3, 4)]),
        "mul": (ops.mul, [n(3, 4), n(3, 4)]),
        "scale": (lambda x: ops.scale(x, -1.7), [n(5)]),
        "add_scalar": (lambda x: ops.add_scalar(x, 0.3), [n(5)]),
        "neg": (ops.neg, [n(2, 3)]),
        "matmul": (ops.matmul, [n(3, 4), n(4, 2)]),
        "matmul_batched": (ops.matmul, [n(2, 3, 4), n(2, 4, 5)]),
        "linear": (ops.linear, [n(2, 3, 4), n(4, 5), n(5)]),
        "tanh": (ops.tanh, [n(3, 4)]),
        "sigmoid": (ops.sigmoid, [n(3, 4)]),
        "relu": (ops.relu, [_away_from_zero(rng, (3, 4))]),
        "concat": (lambda a, b: ops.concat([a, b], axis=0), [n(2, 3), n(4, 3)]),
        "stack": (lambda a, b: ops.stack([a, b], axis=1), [n(2, 3), n(2, 3)]),
        "slice": (lambda x: ops.slice_(x, 1, 3, axis=1), [n(2, 4)]),
        "take": (lambda x: ops.take(x, [2, 0, 2]), [n(4, 3)]),
        "reshape": (lambda x: ops.reshape(x, (3, 4)), [n(2, 6)]),
        "transpose": (lambda x: ops.transpose(x, (2, 0, 1)), [n(2, 3, 4)]),
        "expand": (lambda x: ops.expand(x, 1, 3), [n(2, 4)]),
        "reduce_sum": (lambda x: ops.reduce_sum(x, axis=1), [n(3, 4)]),
        "reduce_mean": (lambda x: ops.reduce_mean(x, axis=0), [n(3, 4)]),
        "mse": (lambda x: ops.mse(x, np.linspace(-1, 1, 6)), [n(6)]),
        "softmax_masked": (lambda x: ops.softmax_lastdim(x, mask), [n(2, 3, 3)]),
        "layer_norm": (ops.layer_norm, [n(3, 5), n(5), n(5)]),
        "conv2d": (lambda x, w, b: ops.conv2d(x, w, b, stride=2, padding=1), [n(2, 2, 5, 5), n(3, 2, 3, 3), n(3)]),
    }


def check_op(fn, arrays, rng) -> float:
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    probe = fn(*tensors)
    weight = Tensor(rng.normal(size=probe.shape))
    return grad_check_params(lambda: ops.reduce_sum(ops.mul(fn(*tensors), weight)), tensors, EPS)


def check_lstm_chain(rng, steps: int = 3, d_in: int = 3, hidden: int = 4) -> float:
    layer = LstmLayer.init(d_in, hidden, rng)
    for g in layer.b:
        layer.b[g].data[...] = rng.normal(scale=0.1, size=hidden)
    xs = [Tensor(rng.normal(size=(2, d_in)), requires_grad=True) for _ in range(steps)]
    h0 = Tensor(rng.normal(size=(2, hidden)), requires_grad=True)
    c0 = Tensor(rng.normal(size=(2, hidden)), requires_grad=True)
    weight = Tensor(rng.normal(size=(2, hidden)))

    def loss():
        h, c = h0, c0
        for x in xs:
            h, c = lstm_cell(x, h, c, layer)
        return ops.reduce_sum(ops.mul(h, weight))

    params = [*layer.W.values(), *layer.U.values(), *layer.b.values(), *xs, h0, c0]
    return grad_check_params(loss, params, EPS)


def check_cde_solve(rng, hidden: int = 4, channels: int = 2) -> float:
    """CDE with ``channels`` path channels (time included) over three RK4 steps."""
    params = CdeParams.init(channels, hidden, width=8, rng=rng)
    times = np.sort(rng.uniform(0.0, 2.0, 3))
    path = build_path(ObservationSequence.create(times, rng.normal(size=(3, channels - 1))), "hermite_backward")
    # two knot intervals; ask for one extra interior point so the solve takes three steps
    mid = 0.5 * (times[0] + times[1])
    weight = Tensor(rng.normal(size=(3,)))

    def loss():
        traj = solve_cde(params, path, [mid, times[1], times[2]], substeps=1)
        return ops.reduce_sum(ops.mul(ops.reduce_sum(traj.states, axis=1), weight))

    return grad_check_params(loss, params.tensors(), EPS)


def check_fusion_block(rng, d_model: int = 8, heads: int = 2, t: int = 3) -> float:
    """Loss -> attention block -> trunk embedding map, concat width 4 + 2 + 2."""
    fp = FusionParams.init(trunk_hidden=3, mode="concat", heads=heads, d_emb=4, d_img=2, d_stat=2, rng=rng)
    assert fp.d_model == d_model
    for g, b in (fp.ln1, fp.ln2):
        g.data[...] = 1.0 + 0.1 * rng.normal(size=d_model)
        b.data[...] = 0.1 * rng.normal(size=d_model)
    z = Tensor(rng.normal(size=(t, 3)))
    img = Tensor(rng.normal(size=(2,)), requires_grad=True)
    stat = Tensor(rng.normal(size=(2,)), requires_grad=True)
    weight = Tensor(rng.normal(size=(t,)))

    def loss():
        emb = ops.linear(z, fp.embed_w, fp.embed_b)
        tokens = ops.concat([emb, ops.expand(img, 0, t), ops.expand(stat, 0, t)], axis=-1)
        return ops.reduce_sum(ops.mul(fusion_block_forward(tokens, fp), weight))

    return grad_check_params(loss, {**fp.tensors(), "img": img, "stat": stat}, EPS)


def run_suite(seed: int = 0) -> Iterator[tuple[str, float, float]]:
    """Yield ``(name, max relative error, tolerance)`` for every check."""
    rng = np.random.default_rng(seed)
    for name, (fn, arrays) in op_cases(rng).items():
        yield name, check_op(fn, arrays, rng), OP_TOL
    yield "lstm_cell_chain", check_lstm_chain(rng), OP_TOL
    yield "cde_solve", check_cde_solve(rng), CDE_TOL
    yield "fusion_block", check_fusion_block(rng), OP_TOL
