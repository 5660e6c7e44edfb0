"""Two-layer stacked LSTM baseline with a one-layer forecasting head.

Cell, with sigmoid gates and tanh for both the candidate and the output squash:

    f = sig(W_f x + U_f h + b_f)      i = sig(W_i x + U_i h + b_i)
    o = sig(W_o x + U_o h + b_o)
    c' = f * c + i * tanh(W_c x + U_c h + b_c)
    h' = o * tanh(c')

Weights are stored input-major (``x @ W``), so ``W_f`` here is the transpose
of the matrix in the textbook formulation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops
from .errors import DimensionError
from .layers import dense, uniform_weight, zeros

GATES = ("f", "i", "o", "c")


@dataclass
class LstmLayer:
    W: dict[str, Tensor]  # gate -> [d_in, h]
    U: dict[str, Tensor]  # gate -> [h, h]
    b: dict[str, Tensor]  # gate -> [h]

    @classmethod
    def init(cls, d_in: int, hidden: int, rng: np.random.Generator) -> "LstmLayer":
        return cls({g: uniform_weight(rng, d_in, (d_in, hidden)) for g in GATES},
                   {g: uniform_weight(rng, hidden, (hidden, hidden)) for g in GATES},
                   {g: zeros(hidden) for g in GATES})

    @property
    def d_in(self) -> int:
        return self.W["f"].shape[0]

    @property
    def hidden(self) -> int:
        return self.W["f"].shape[1]


@dataclass
class LstmParams:
    layers: list[LstmLayer]
    head_w: Tensor | None
    head_b: Tensor | None

    @classmethod
    def init(cls, d_in: int, hidden: int = 16, n_layers: int = 2,
             rng: np.random.Generator | None = None) -> "LstmParams":
        rng = rng if rng is not None else np.random.default_rng(0)
        layers = [LstmLayer.init(d_in if i == 0 else hidden, hidden, rng) for i in range(n_layers)]
        hw, hb = dense(rng, hidden, 1)
        return cls(layers, hw, hb)

    @property
    def hidden(self) -> int:
        return self.layers[-1].hidden

    def tensors(self, prefix: str = "lstm") -> dict[str, Tensor]:
        out = {}
        for li, layer in enumerate(self.layers):
            for g in GATES:
                out[f"{prefix}.{li}.W_{g}"] = layer.W[g]
                out[f"{prefix}.{li}.U_{g}"] = layer.U[g]
                out[f"{prefix}.{li}.b_{g}"] = layer.b[g]
        if self.head_w is not None:
            out[f"{prefix}.head.w"] = self.head_w
            out[f"{prefix}.head.b"] = self.head_b
        return out


def lstm_cell(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, layer: LstmLayer) -> tuple[Tensor, Tensor]:
    if x_t.shape[-1] != layer.d_in or h_prev.shape[-1] != layer.hidden or c_prev.shape != h_prev.shape:
        raise DimensionError(
            f"lstm_cell: x {list(x_t.shape)}, h {list(h_prev.shape)}, c {list(c_prev.shape)} "
            f"vs layer ({layer.d_in} -> {layer.hidden})")

    def pre(g):
        return ops.linear(x_t, layer.W[g], layer.b[g]) + ops.linear(h_prev, layer.U[g])

    f = ops.sigmoid(pre("f"))
    i = ops.sigmoid(pre("i"))
    o = ops.sigmoid(pre("o"))
    c_t = f * c_prev + i * ops.tanh(pre("c"))
    h_t = o * ops.tanh(c_t)
    return h_t, c_t


def lstm_forward(seq, params: LstmParams) -> Tensor:
    """Run the stack over ``seq`` ([T, d] or [B, T, d]); returns top-layer states, same layout.

    State starts at zero for every sequence.
    """
    x = seq if isinstance(seq, Tensor) else Tensor(seq)
    single = x.ndim == 2
    if single:
        x = x.reshape(1, *x.shape)
    b, t, _ = x.shape
    steps = [ops.take(ops.transpose(x, (1, 0, 2)), [k]).reshape(b, x.shape[2]) for k in range(t)] \
        if t > 1 else [x.reshape(b, x.shape[2])]
    for layer in params.layers:
        h = Tensor(np.zeros((b, layer.hidden)))
        c = Tensor(np.zeros((b, layer.hidden)))
        outs = []
        for x_t in steps:
            h, c = lstm_cell(x_t, h, c, layer)
            outs.append(h)
        steps = outs
    out = ops.stack(steps, axis=1)  # [B, T, h]
    return out.reshape(t, params.hidden) if single else out


def forecast_head(hidden: Tensor, params: LstmParams) -> Tensor:
    """Affine map to one scalar per hidden vector (trailing axis dropped)."""
    out = ops.linear(hidden, params.head_w, params.head_b)
    return out.reshape(out.shape[:-1])
