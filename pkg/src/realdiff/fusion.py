"""Causally masked multi-head attention fusion head.

Per time step the trunk embedding is combined with the (time-invariant)
image and static embeddings, either by concatenation or by projecting the
two context embeddings to the trunk width and adding.  One decoder-style
block follows:

    pre-norm:   u = x + MHA(LN1(x));  v = u + FFN(LN2(u))
    post-norm:  u = LN1(x + MHA(x));  v = LN2(u + FFN(u))

and a hidden relu layer plus an affine map give one prediction per step.
There is no positional encoding; order only enters through the mask.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops
from .cde import CdeParams, detach_readout
from .errors import ConfigError, DimensionError
from .layers import dense, uniform_weight

FUSION_MODES = ("sum", "concat")
NORM_ORDERS = ("pre", "post")


def causal_mask(t: int) -> np.ndarray:
    """[t, t] boolean, True where key index <= query index."""
    return np.tril(np.ones((t, t), dtype=bool))


@dataclass
class FusionParams:
    mode: str
    heads: int
    d_emb: int
    d_img: int
    d_stat: int
    norm_order: str
    embed_w: Tensor   # trunk hidden -> d_emb
    embed_b: Tensor
    proj_img: Tensor | None
    proj_stat: Tensor | None
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ln1: tuple[Tensor, Tensor]
    ln2: tuple[Tensor, Tensor]
    ffn: list[tuple[Tensor, Tensor]]
    hid: tuple[Tensor, Tensor]
    out: tuple[Tensor, Tensor]
    time_w: Tensor | None = None

    @property
    def d_model(self) -> int:
        return self.wq.shape[0]

    @classmethod
    def init(cls, trunk_hidden: int, mode: str = "concat", heads: int = 4, d_emb: int = 16,
             d_img: int = 16, d_stat: int = 8, norm_order: str = "pre", time_embedding: bool = False,
             rng: np.random.Generator | None = None,
             embed: tuple[Tensor, Tensor] | None = None) -> "FusionParams":
        if mode not in FUSION_MODES:
            raise ConfigError(f"fusion mode {mode!r} not in {FUSION_MODES}")
        if norm_order not in NORM_ORDERS:
            raise ConfigError(f"norm_order {norm_order!r} not in {NORM_ORDERS}")
        rng = rng if rng is not None else np.random.default_rng(0)
        d = d_emb + d_img + d_stat if mode == "concat" else d_emb
        if d % heads:
            raise ConfigError(f"d_model={d} is not divisible by heads={heads}")
        ew, eb = embed if embed is not None else dense(rng, trunk_hidden, d_emb)
        pi = ps = None
        if mode == "sum":
            pi = uniform_weight(rng, d_img, (d_img, d_emb))
            ps = uniform_weight(rng, d_stat, (d_stat, d_emb))
        sq = lambda: uniform_weight(rng, d, (d, d))  # noqa: E731
        ln = lambda: (Tensor(np.ones(d), requires_grad=True), Tensor(np.zeros(d), requires_grad=True))  # noqa: E731
        tw = uniform_weight(rng, 1, (1, d)) if time_embedding else None
        return cls(mode, heads, d_emb, d_img, d_stat, norm_order, ew, eb, pi, ps,
                   sq(), sq(), sq(), sq(), ln(), ln(),
                   [dense(rng, d, 4 * d), dense(rng, 4 * d, d)], dense(rng, d, d), dense(rng, d, 1), tw)

    def tensors(self, prefix: str = "fusion") -> dict[str, Tensor]:
        out = {"embed.w": self.embed_w, "embed.b": self.embed_b}
        if self.proj_img is not None:
            out[f"{prefix}.proj_img"] = self.proj_img
            out[f"{prefix}.proj_stat"] = self.proj_stat
        for k in ("wq", "wk", "wv", "wo"):
            out[f"{prefix}.{k}"] = getattr(self, k)
        for k in ("ln1", "ln2"):
            g, b = getattr(self, k)
            out[f"{prefix}.{k}.gamma"] = g
            out[f"{prefix}.{k}.beta"] = b
        for i, (w, b) in enumerate(self.ffn):
            out[f"{prefix}.ffn.{i}.w"] = w
            out[f"{prefix}.ffn.{i}.b"] = b
        out[f"{prefix}.hid.w"], out[f"{prefix}.hid.b"] = self.hid
        out[f"{prefix}.out.w"], out[f"{prefix}.out.b"] = self.out
        if self.time_w is not None:
            out[f"{prefix}.time.w"] = self.time_w
        return out


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    return (x.reshape(1, *x.shape), True) if x.ndim == 2 else (x, False)


def fuse_embeddings(trunk: Tensor, img: Tensor, static: Tensor, mode: str,
                    params: FusionParams | None = None) -> Tensor:
    """Per-step tokens from trunk [..., T, d_emb] and context [..., d_img] / [..., d_stat]."""
    axis = trunk.ndim - 2
    t = trunk.shape[axis]
    if mode == "concat":
        return ops.concat([trunk, ops.expand(img, axis, t), ops.expand(static, axis, t)], axis=-1)
    if mode == "sum":
        if params is None or params.proj_img is None:
            raise DimensionError("sum fusion needs projections of the image and static embeddings")
        pi = ops.linear(img, params.proj_img)
        ps = ops.linear(static, params.proj_stat)
        if pi.shape[-1] != trunk.shape[-1]:
            raise DimensionError(f"sum fusion width mismatch: {pi.shape[-1]} vs {trunk.shape[-1]}")
        return trunk + ops.expand(pi + ps, axis, t)
    raise ConfigError(f"unknown fusion mode {mode!r}")


def causal_attention(tokens: Tensor, params: FusionParams, return_weights: bool = False):
    """softmax(Q K^T / sqrt(d_k) + mask) V per head, heads concatenated, then W_O."""
    x, single = _batched(tokens)
    b, t, d = x.shape
    h = params.heads
    if d % h:
        raise ConfigError(f"d_model={d} is not divisible by heads={h}")
    dk = d // h

    def split(w):
        return ops.transpose(ops.linear(x, w).reshape(b, t, h, dk), (0, 2, 1, 3))  # [B, H, T, dk]

    q, k, v = split(params.wq), split(params.wk), split(params.wv)
    scores = ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dk))
    weights = ops.softmax_lastdim(scores, mask=causal_mask(t))
    ctx = ops.transpose(ops.matmul(weights, v), (0, 2, 1, 3)).reshape(b, t, d)
    out = ops.linear(ctx, params.wo)
    if single:
        out = out.reshape(t, d)
    if return_weights:
        return out, (weights.reshape(h, t, t) if single else weights)
    return out


def fusion_block_forward(tokens: Tensor, params: FusionParams, times=None) -> Tensor:
    """Tokens [..., T, d_model] -> predictions [..., T]."""
    x = tokens
    if params.time_w is not None:
        if times is None:
            raise ValueError("time embedding enabled but no times given")
        tt = Tensor(np.asarray(times, dtype=np.float64).reshape(x.shape[:-1] + (1,)))
        x = x + ops.linear(tt, params.time_w)
    (g1, b1), (g2, b2) = params.ln1, params.ln2

    def ffn(y):
        (w1, c1), (w2, c2) = params.ffn
        return ops.linear(ops.relu(ops.linear(y, w1, c1)), w2, c2)

    if params.norm_order == "pre":
        u = x + causal_attention(ops.layer_norm(x, g1, b1), params)
        v = u + ffn(ops.layer_norm(u, g2, b2))
    else:
        u = ops.layer_norm(x + causal_attention(x, params), g1, b1)
        v = ops.layer_norm(u + ffn(u), g2, b2)
    hw, hb = params.hid
    ow, ob = params.out
    pred = ops.linear(ops.relu(ops.linear(v, hw, hb)), ow, ob)
    return pred.reshape(pred.shape[:-1])


def attach_embedding_head(pretrained: CdeParams, d_emb: int, rng: np.random.Generator | None = None
                          ) -> tuple[CdeParams, tuple[Tensor, Tensor]]:
    """Drop the forecasting head; return a bit-exact trunk copy and a fresh h -> d_emb map."""
    rng = rng if rng is not None else np.random.default_rng(0)
    trunk = detach_readout(pretrained)
    return trunk, dense(rng, pretrained.hidden, d_emb)
