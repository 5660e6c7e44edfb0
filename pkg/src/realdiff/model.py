"""End-to-end models: trunk (CDE or LSTM) x modality x fusion head.

Inputs for patient step ``i`` are the normalized FVC at visit ``i``, its
normalized week and the normalized week of visit ``i+1``; the target is the
normalized FVC at visit ``i+1``.  Only visits ``0..n-2`` enter the trunk, so
no target value is ever part of its input.

* CDE trunk: control path over the input visits with channels
  ``[time, fvc, next_time]``; the state is read at the parameter where each
  visit has been absorbed.
* LSTM trunk: rows ``[fvc, time, next_time, delta]`` over forward-filled
  inputs, ``delta`` being the time since the previous visit.

Heads: structured models use the trunk's own affine readout.  Multimodal
without fusion concatenates ``[z_t, img, static]`` into one affine map.
Fusion maps ``z_t`` to an embedding and runs the attention block.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops
from .cde import CdeParams, SolvePlan, gather_evals, integrate, plan_solve, readout_forecast
from .config import ExperimentConfig
from .data import PreparedPatient
from .encoders import EncoderParams, ImageRef, encode_images, encode_static
from .errors import ConfigError
from .fusion import FusionParams, fuse_embeddings, fusion_block_forward
from .layers import dense
from .lstm import LstmParams, forecast_head, lstm_forward
from .paths import ControlPath, ObservationSequence, build_path, forward_fill

N_STATIC = 3
PATH_CHANNELS = 3  # time, fvc, next_time


def input_observations(p: PreparedPatient) -> ObservationSequence:
    """Visits 0..n-2 with values ``[fvc, next_time]``."""
    return ObservationSequence.create(p.times[:-1], np.stack([p.fvc[:-1], p.times[1:]], axis=1))


def patient_path(p: PreparedPatient, scheme: str) -> ControlPath:
    return build_path(input_observations(p), scheme)


def lstm_rows(p: PreparedPatient, time_delta: bool = True) -> np.ndarray:
    obs = input_observations(p)
    filled, deltas = forward_fill(obs)
    cols = [filled[:, 0], obs.times, filled[:, 1]] + ([deltas] if time_delta else [])
    return np.stack(cols, axis=1)


@dataclass
class Batch:
    patient_ids: list[str]
    lengths: np.ndarray     # examples per patient
    times: np.ndarray       # [B, T] normalized input times, end-padded with the last one
    targets: np.ndarray     # [N] flattened real targets
    keep: np.ndarray        # [N] indices into the flattened [B*T] prediction grid
    static: np.ndarray      # [B, N_STATIC]
    images: list[list[ImageRef]] | None
    plan: SolvePlan | None = None
    seq: np.ndarray | None = None  # [B, T, d] end-padded with zeros

    @property
    def size(self) -> int:
        return len(self.patient_ids)

    @property
    def width(self) -> int:
        return self.times.shape[1]


def build_batch(patients: list[PreparedPatient], cfg: ExperimentConfig) -> Batch:
    if not patients:
        raise ValueError("cannot build an empty batch")
    lengths = np.array([p.n_examples for p in patients])
    t = int(lengths.max())
    times = np.stack([np.concatenate([p.times[:-1], np.full(t - n, p.times[-2])])
                      for p, n in zip(patients, lengths)])
    keep = np.concatenate([b * t + np.arange(n) for b, n in enumerate(lengths)])
    targets = np.concatenate([p.targets for p in patients])
    static = np.stack([p.static for p in patients])
    images = None
    if cfg.modality == "multimodal":
        missing = [p.patient_id for p in patients if not p.images]
        if missing:
            raise ConfigError(f"multimodal model but no image for patients {missing[:5]}")
        images = [p.images for p in patients]
    plan = seq = None
    if cfg.trunk == "cde":
        paths = [patient_path(p, cfg.scheme) for p in patients]
        plan = plan_solve(paths, [p.times[:-1] for p in patients], cfg.substeps)
    else:
        rows = [lstm_rows(p, cfg.lstm_time_delta) for p in patients]
        seq = np.zeros((len(patients), t, rows[0].shape[1]))
        for b, r in enumerate(rows):
            seq[b, : len(r)] = r
    return Batch([p.patient_id for p in patients], lengths, times, targets, keep, static, images, plan, seq)


class DiseaseModel:
    """Parameter container plus forward pass for one configuration."""

    def __init__(self, cfg: ExperimentConfig, rng: np.random.Generator | None = None,
                 precomputed_dim: int | None = None):
        cfg.validate()
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.cde: CdeParams | None = None
        self.lstm: LstmParams | None = None
        if cfg.trunk == "cde":
            self.cde = CdeParams.init(PATH_CHANNELS, cfg.hidden, cfg.mlp_width, rng)
        else:
            self.lstm = LstmParams.init(4 if cfg.lstm_time_delta else 3, cfg.hidden, cfg.lstm_layers, rng)
        self.enc: EncoderParams | None = None
        self.fusion: FusionParams | None = None
        self.head: tuple[Tensor, Tensor] | None = None
        if cfg.modality == "multimodal":
            self.enc = EncoderParams.init(N_STATIC, cfg.d_img, cfg.d_stat, cfg.image_size, precomputed_dim, rng)
            if cfg.fusion == "none":
                self.head = dense(rng, cfg.hidden + cfg.d_img + cfg.d_stat, 1)
            else:
                self.fusion = FusionParams.init(cfg.hidden, cfg.fusion, cfg.heads, cfg.d_emb, cfg.d_img,
                                                cfg.d_stat, cfg.norm_order, cfg.time_embedding, rng)
            self._drop_trunk_head()

    def _drop_trunk_head(self) -> None:
        if self.cde is not None:
            self.cde.readout_w = self.cde.readout_b = None
        if self.lstm is not None:
            self.lstm.head_w = self.lstm.head_b = None

    def install_pretrained_trunk(self, trunk: CdeParams, embed: tuple[Tensor, Tensor]) -> None:
        if self.fusion is None or self.cfg.trunk != "cde":
            raise ConfigError("a pretrained trunk can only be installed into a CDE fusion model")
        self.cde = trunk
        self.fusion.embed_w, self.fusion.embed_b = embed

    def params(self) -> dict[str, Tensor]:
        out = {}
        if self.cde is not None:
            out.update(self.cde.tensors())
        if self.lstm is not None:
            out.update(self.lstm.tensors())
        if self.enc is not None:
            out.update(self.enc.tensors())
        if self.head is not None:
            out["head.w"], out["head.b"] = self.head
        if self.fusion is not None:
            out.update(self.fusion.tensors())
        return out

    # ------------------------------------------------------------- forward

    def trunk_states(self, batch: Batch) -> Tensor:
        """[B, T, hidden] trunk state at every (padded) input step."""
        if self.cde is not None:
            return gather_evals(integrate(self.cde, batch.plan), batch.plan, batch.width)
        return lstm_forward(batch.seq, self.lstm)

    def context(self, batch: Batch, slices: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        """Image [B, d_img] and static [B, d_stat] embeddings; slice 0 unless ``slices`` given."""
        pick = slices if slices is not None else np.zeros(batch.size, dtype=int)
        imgs = [stack[int(k) % len(stack)] for stack, k in zip(batch.images, pick)]
        return encode_images(imgs, self.enc), encode_static(batch.static, self.enc)

    def forward(self, batch: Batch, slices: np.ndarray | None = None) -> Tensor:
        """Predictions for every real example in the batch, flattened patient by patient."""
        z = self.trunk_states(batch)
        if self.cfg.modality == "structured":
            grid = readout_forecast(self.cde, z) if self.cde is not None else forecast_head(z, self.lstm)
        else:
            img, stat = self.context(batch, slices)
            if self.fusion is None:
                axis, t = 1, batch.width
                feats = ops.concat([z, ops.expand(img, axis, t), ops.expand(stat, axis, t)], axis=-1)
                w, b = self.head
                out = ops.linear(feats, w, b)
                grid = out.reshape(out.shape[:-1])
            else:
                emb = ops.linear(z, self.fusion.embed_w, self.fusion.embed_b)
                tokens = fuse_embeddings(emb, img, stat, self.cfg.fusion, self.fusion)
                grid = fusion_block_forward(tokens, self.fusion, times=batch.times)
        return ops.take(grid.reshape(-1), batch.keep)

    def predict(self, batch: Batch) -> np.ndarray:
        return self.forward(batch).data.copy()


def realdifffusionnet_forward(patient: PreparedPatient, model: DiseaseModel,
                              config: ExperimentConfig | None = None) -> np.ndarray:
    """Predictions at each of the patient's input visits (one per shifted example)."""
    cfg = (config or model.cfg).validate()
    return model.predict(build_batch([patient], cfg))
