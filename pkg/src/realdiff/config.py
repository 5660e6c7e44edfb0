"""Experiment configuration and the flat ``key = value`` config file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .fusion import FUSION_MODES, NORM_ORDERS
from .paths import CAUSAL_SCHEMES, SCHEMES

TRUNKS = ("cde", "lstm")
MODALITIES = ("structured", "multimodal")


@dataclass
class ExperimentConfig:
    trunk: str = "cde"
    modality: str = "structured"
    fusion: str = "none"
    scheme: str = "hermite_backward"
    pretrain: bool = False
    allow_noncausal: bool = False
    seed: int = 0
    epochs: int = 300
    pretrain_epochs: int = 200
    lr: float = 1e-3
    clip: float = 1.0
    hidden: int = 16
    mlp_width: int = 64
    substeps: int = 2
    lstm_layers: int = 2
    lstm_time_delta: bool = True
    d_emb: int = 16
    d_img: int = 16
    d_stat: int = 8
    heads: int = 4
    norm_order: str = "pre"
    time_embedding: bool = False
    image_size: int = 32
    precomputed_features: str = ""

    def validate(self) -> "ExperimentConfig":
        def one_of(key, allowed):
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key}={getattr(self, key)!r} not in {allowed}")

        one_of("trunk", TRUNKS)
        one_of("modality", MODALITIES)
        one_of("fusion", ("none",) + FUSION_MODES)
        one_of("scheme", SCHEMES)
        one_of("norm_order", NORM_ORDERS)
        if self.fusion != "none" and self.modality != "multimodal":
            raise ConfigError("fusion requires modality=multimodal")
        if self.fusion != "none" and self.scheme not in CAUSAL_SCHEMES and not self.allow_noncausal:
            raise ConfigError(f"scheme {self.scheme!r} is not causal; set allow_noncausal=true to use it with fusion")
        if self.pretrain and self.trunk != "cde":
            raise ConfigError("pretraining is defined for the CDE trunk only")
        if self.pretrain and self.fusion == "none":
            raise ConfigError("pretrain=true needs a fusion head to hand the trunk to")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        d_model = self.d_emb + self.d_img + self.d_stat if self.fusion == "concat" else self.d_emb
        if self.fusion != "none" and d_model % self.heads:
            raise ConfigError(f"d_model={d_model} is not divisible by heads={self.heads}")
        return self

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _coerce(field: dataclasses.Field, raw: str):
    kind = field.type if isinstance(field.type, str) else field.type.__name__
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{field.name}: cannot parse {raw!r} as {kind}") from exc
    return raw


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Aliases: fusion_mode -> fusion."""
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    aliases = {"fusion_mode": "fusion"}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = aliases.get(key, key)
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(fields[key], raw)
    return ExperimentConfig(**values).validate()


def load_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
