"""Regression metrics on normalized targets."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SplitMetrics:
    rmse: float
    mae: float
    r2: float | None  # None when the targets are constant
    n: int

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae, "r2": self.r2, "n": self.n}


def compute_metrics(preds, targets) -> tuple[float, float, float | None]:
    """(rmse, mae, r2); r2 is None (with a warning) when the targets are constant."""
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ValueError(f"preds/targets length mismatch: {p.size} vs {t.size}")
    if p.size == 0:
        raise ValueError("compute_metrics needs at least one example")
    err = p - t
    rmse = math.sqrt(float(np.mean(err * err)))
    mae = float(np.mean(np.abs(err)))
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if t.size < 2 or ss_tot == 0.0:
        warnings.warn("targets are constant; R^2 is undefined and reported as missing")
        return rmse, mae, None
    return rmse, mae, 1.0 - float(np.sum(err * err)) / ss_tot


def split_metrics(preds, targets) -> SplitMetrics:
    rmse, mae, r2 = compute_metrics(preds, targets)
    return SplitMetrics(rmse, mae, r2, int(np.size(targets)))
