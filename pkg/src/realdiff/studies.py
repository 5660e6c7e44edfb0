"""Multi-seed training studies: learning signal from images, pretraining speed-up, capacity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .config import ExperimentConfig
from .data import Cohort, compute_stats, generate_synthetic_cohort, prepare_patient
from .experiment import cell_config, run_experiment
from .model import DiseaseModel, build_batch
from .training import fit

CAPACITY_VARIANTS = {
    "cde_structured": dict(trunk="cde", modality="structured"),
    "cde_multimodal": dict(trunk="cde", modality="multimodal"),
    "lstm_structured": dict(trunk="lstm", modality="structured"),
    "lstm_multimodal": dict(trunk="lstm", modality="multimodal"),
}


@dataclass
class PairedResult:
    seeds: list[int]
    a: list[float]   # candidate
    b: list[float]   # reference

    @property
    def wins(self) -> int:
        return sum(x < y for x, y in zip(self.a, self.b))


def learning_signal(seeds=range(5), n: int = 40, cohort_seed: int = 0,
                    base: ExperimentConfig | None = None) -> PairedResult:
    """Test RMSE of the concat-fusion CDE (a) vs the structured-only CDE (b) per run seed."""
    base = base or ExperimentConfig()
    cohort = generate_synthetic_cohort(n, cohort_seed)
    a, b = [], []
    for s in seeds:
        a.append(run_experiment(cell_config(base.replace(seed=s), "cde_fusion_concat"), cohort).rmse("test"))
        b.append(run_experiment(cell_config(base.replace(seed=s), "cde_structured"), cohort).rmse("test"))
    return PairedResult(list(seeds), a, b)


def epochs_to_reach(curve: list[float], level: float) -> float:
    """1-based epoch at which ``curve`` first drops to ``level``; inf if never."""
    for i, v in enumerate(curve):
        if v <= level:
            return float(i + 1)
    return float("inf")


def handoff_speedup(seeds=range(5), n: int = 40, cohort_seed: int = 0,
                    base: ExperimentConfig | None = None) -> PairedResult:
    """Fine-tuning epochs needed to reach the final pretrain validation loss.

    (a) fusion model initialized from the pretrained trunk, (b) the same model
    from random init.  Both share the split and the fine-tuning budget.
    """
    base = base or ExperimentConfig()
    cohort = generate_synthetic_cohort(n, cohort_seed)
    a, b = [], []
    for s in seeds:
        cfg = cell_config(base.replace(seed=s), "cde_fusion_concat")
        pre = run_experiment(cfg, cohort)
        rand = run_experiment(cfg.replace(pretrain=False), cohort)
        level = pre.pretrain_val_loss[-1]
        a.append(epochs_to_reach(pre.val_loss, level))
        b.append(epochs_to_reach(rand.val_loss, level))
    return PairedResult(list(seeds), a, b)


def capacity_rmse(variant: str, epochs: int = 1500, lr: float = 5e-3, n: int = 4, seed: int = 0,
                  substeps: int = 2) -> float:
    """Train RMSE after fitting one trunk x modality variant to a tiny cohort."""
    cohort: Cohort = generate_synthetic_cohort(n, seed)
    stats = compute_stats(cohort)
    patients = [prepare_patient(r, stats) for r in cohort.records]
    cfg = ExperimentConfig(substeps=substeps, **CAPACITY_VARIANTS[variant])
    model = DiseaseModel(cfg, np.random.default_rng([seed, 1]))
    batch = build_batch(patients, cfg)
    fit(model.params(), lambda _: ops.mse(model.forward(batch), batch.targets), epochs, lr=lr)
    return float(np.sqrt(np.mean((model.predict(batch) - batch.targets) ** 2)))
