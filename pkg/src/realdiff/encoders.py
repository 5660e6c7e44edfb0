"""Image and static-feature encoders.

The image branch is a small conv stack standing in for a pretrained CT
network: two 3x3 stride-2 convolutions (8 then 16 channels, relu), global
average pooling, then an affine map to ``d_img``.  Feature vectors computed
elsewhere can be injected instead; they skip the conv stack and go through
their own affine map.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, ops
from .errors import DimensionError, FormatError
from .layers import dense, uniform_weight, zeros


@dataclass(frozen=True)
class ImageRef:
    """Exactly one of ``pixels`` (grayscale [H, W] in [0, 1]) or ``features``."""
    pixels: np.ndarray | None = None
    features: np.ndarray | None = None

    def __post_init__(self):
        if (self.pixels is None) == (self.features is None):
            raise ValueError("ImageRef needs exactly one of pixels / features")
        if self.pixels is not None:
            px = np.asarray(self.pixels, dtype=np.float64)
            if px.ndim != 2 or px.min() < 0.0 or px.max() > 1.0:
                raise ValueError("pixels must be a 2-D array with values in [0, 1]")
            object.__setattr__(self, "pixels", px)
        else:
            object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64).reshape(-1))

    @property
    def is_precomputed(self) -> bool:
        return self.features is not None


@dataclass
class EncoderParams:
    image_size: int
    n_static: int
    d_img: int
    d_stat: int
    conv: list[tuple[Tensor, Tensor]]
    img_w: Tensor
    img_b: Tensor
    static: list[tuple[Tensor, Tensor]]
    feat_w: Tensor | None = None  # precomputed features -> d_img
    feat_b: Tensor | None = None

    @classmethod
    def init(cls, n_static: int, d_img: int = 16, d_stat: int = 8, image_size: int = 32,
             precomputed_dim: int | None = None, rng: np.random.Generator | None = None,
             static_width: int = 32) -> "EncoderParams":
        rng = rng if rng is not None else np.random.default_rng(0)
        conv = []
        c_in = 1
        for c_out in (8, 16):
            fan_in = c_in * 9
            conv.append((uniform_weight(rng, fan_in, (c_out, c_in, 3, 3)), zeros(c_out)))
            c_in = c_out
        iw, ib = dense(rng, 16, d_img)
        static = [dense(rng, n_static, static_width), dense(rng, static_width, d_stat)]
        fw = fb = None
        if precomputed_dim:
            fw, fb = dense(rng, precomputed_dim, d_img)
        return cls(image_size, n_static, d_img, d_stat, conv, iw, ib, static, fw, fb)

    def tensors(self, prefix: str = "enc") -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(self.conv):
            out[f"{prefix}.conv.{i}.w"] = w
            out[f"{prefix}.conv.{i}.b"] = b
        out[f"{prefix}.img.w"] = self.img_w
        out[f"{prefix}.img.b"] = self.img_b
        for i, (w, b) in enumerate(self.static):
            out[f"{prefix}.static.{i}.w"] = w
            out[f"{prefix}.static.{i}.b"] = b
        if self.feat_w is not None:
            out[f"{prefix}.feat.w"] = self.feat_w
            out[f"{prefix}.feat.b"] = self.feat_b
        return out


def encode_pixels(pixels: np.ndarray, params: EncoderParams) -> Tensor:
    """Batch of images [N, H, W] -> [N, d_img]."""
    pixels = np.asarray(pixels, dtype=np.float64)
    s = params.image_size
    if pixels.ndim != 3 or pixels.shape[1:] != (s, s):
        raise DimensionError(f"expected images of size {s}x{s}, got {list(pixels.shape[1:])}")
    x = Tensor(pixels[:, None, :, :])
    for w, b in params.conv:
        x = ops.relu(ops.conv2d(x, w, b, stride=2, padding=1))
    n, c, h, wd = x.shape
    pooled = ops.reduce_mean(x.reshape(n, c, h * wd), axis=2)
    return ops.linear(pooled, params.img_w, params.img_b)


def encode_features(features: np.ndarray, params: EncoderParams) -> Tensor:
    features = np.asarray(features, dtype=np.float64)
    if params.feat_w is None:
        raise DimensionError("encoder was built without a precomputed-feature input")
    if features.shape[-1] != params.feat_w.shape[0]:
        raise DimensionError(
            f"precomputed feature length {features.shape[-1]} != expected {params.feat_w.shape[0]}")
    return ops.linear(Tensor(features), params.feat_w, params.feat_b)


def encode_image(img: ImageRef, params: EncoderParams) -> Tensor:
    if img.is_precomputed:
        return encode_features(img.features, params)
    return encode_pixels(img.pixels[None], params).reshape(params.d_img)


def encode_images(imgs: list[ImageRef], params: EncoderParams) -> Tensor:
    """Encode a batch that is either all pixels or all precomputed -> [N, d_img]."""
    if all(i.is_precomputed for i in imgs):
        return encode_features(np.stack([i.features for i in imgs]), params)
    if any(i.is_precomputed for i in imgs):
        raise DimensionError("cannot mix precomputed and pixel images in one batch")
    return encode_pixels(np.stack([i.pixels for i in imgs]), params)


def encode_static(features, params: EncoderParams) -> Tensor:
    x = features if isinstance(features, Tensor) else Tensor(np.asarray(features, dtype=np.float64))
    if x.shape[-1] != params.n_static:
        raise DimensionError(f"expected {params.n_static} static features, got {x.shape[-1]}")
    (w1, b1), (w2, b2) = params.static
    return ops.linear(ops.relu(ops.linear(x, w1, b1)), w2, b2)


# ----------------------------------------------------------- feature files

def load_precomputed_features(path) -> dict[str, np.ndarray]:
    """Read ``patient_id,f0,f1,...`` CSV into a map of equal-length vectors."""
    out: dict[str, np.ndarray] = {}
    text = Path(path).read_text()
    if not text.strip():
        return out
    reader = csv.reader(text.splitlines())
    header = next(reader)
    if not header or header[0] != "patient_id":
        raise FormatError("feature file header must start with patient_id")
    width = len(header) - 1
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) - 1 != width:
            raise FormatError(f"row {lineno}: expected {width} features, got {len(row) - 1}")
        pid = row[0]
        if pid in out:
            raise FormatError(f"row {lineno}: duplicate patient id {pid!r}")
        try:
            out[pid] = np.array([float(v) for v in row[1:]])
        except ValueError as exc:
            raise FormatError(f"row {lineno}: non-numeric feature") from exc
    return out


def write_precomputed_features(path, features: dict[str, np.ndarray]) -> None:
    lens = {len(v) for v in features.values()}
    if len(lens) > 1:
        raise FormatError("ragged feature vectors")
    width = lens.pop() if lens else 0
    lines = ["patient_id," + ",".join(f"f{i}" for i in range(width))]
    for pid, vec in features.items():
        lines.append(pid + "," + ",".join(repr(float(v)) for v in vec))
    Path(path).write_text("\n".join(lines) + "\n")
