"""Experiment runner, ablation grid, run logs and plot-data emission."""
from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import ops, load_checkpoint, save_checkpoint
from .cde import SeriesExample, plan_solve, pretrain
from .config import ExperimentConfig, dump_config, load_config
from .data import (Cohort, PreparedCohort, PreparedPatient, load_cohort_dir, preprocess, split_cohort,
                   with_precomputed_images)
from .encoders import load_precomputed_features
from .errors import DivergenceError
from .fusion import attach_embedding_head
from .metrics import split_metrics
from .model import Batch, DiseaseModel, build_batch, patient_path
from .training import History, fit

SPLITS = ("train", "val", "test")


# ---------------------------------------------------------------- run logs

@dataclass
class RunLog:
    config: dict
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    pretrain_train_loss: list[float] = field(default_factory=list)
    pretrain_val_loss: list[float] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)  # split -> {rmse, mae, r2, n} or None
    splits: dict = field(default_factory=dict)   # split -> patient ids
    wall_time: float = 0.0
    version: str = __version__
    data_dir: str = ""

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunLog":
        return cls(**json.loads(text))

    def rmse(self, split: str) -> float | None:
        m = self.metrics.get(split)
        return None if m is None else m["rmse"]


@dataclass
class TrainedRun:
    log: RunLog
    model: DiseaseModel
    prepared: PreparedCohort


# -------------------------------------------------------------- experiment

def prepare_cohort(cfg: ExperimentConfig, cohort: Cohort) -> tuple[PreparedCohort, int | None]:
    dim = None
    if cfg.precomputed_features:
        feats = load_precomputed_features(cfg.precomputed_features)
        cohort = with_precomputed_images(cohort, feats)
        dim = len(next(iter(feats.values()))) if feats else None
    return preprocess(*split_cohort(cohort, cfg.seed)), dim


def batch_loss(model: DiseaseModel, batch: Batch, slices=None):
    return ops.mse(model.forward(batch, slices), batch.targets)


def series_examples(patients: list[PreparedPatient], scheme: str) -> list[SeriesExample]:
    return [SeriesExample(patient_path(p, scheme), p.times[:-1], p.targets) for p in patients]


def train_model(cfg: ExperimentConfig, prepared: PreparedCohort, precomputed_dim: int | None = None,
                log: RunLog | None = None) -> tuple[DiseaseModel, RunLog]:
    """Initialize (optionally pretrain) and fit one configuration on the training split."""
    cfg.validate()
    log = log if log is not None else RunLog(cfg.to_dict())
    rng = np.random.default_rng([cfg.seed, 1])
    model = DiseaseModel(cfg, rng, precomputed_dim)
    train_b = build_batch(prepared.train, cfg)
    val_b = build_batch(prepared.val, cfg) if prepared.val else None

    if cfg.pretrain:
        pre_cfg = cfg.replace(modality="structured", fusion="none", pretrain=False)
        pre_model = DiseaseModel(pre_cfg, np.random.default_rng([cfg.seed, 3]))
        val_ex = series_examples(prepared.val, cfg.scheme) if prepared.val else None
        _, hist = pretrain(pre_model.cde, series_examples(prepared.train, cfg.scheme), cfg.pretrain_epochs,
                           cfg.lr, cfg.clip, cfg.substeps, val_ex)
        log.pretrain_train_loss, log.pretrain_val_loss = hist.train_loss, hist.val_loss
        model.install_pretrained_trunk(*attach_embedding_head(pre_model.cde, cfg.d_emb, rng))

    slice_rng = np.random.default_rng([cfg.seed, 2])

    def loss_fn(_epoch):
        slices = slice_rng.integers(0, 1 << 30, train_b.size) if cfg.modality == "multimodal" else None
        return batch_loss(model, train_b, slices)

    val_fn = (lambda: float(batch_loss(model, val_b).item())) if val_b is not None else None
    try:
        hist = fit(model.params(), loss_fn, cfg.epochs, cfg.lr, cfg.clip, val_fn, History())
    except DivergenceError as exc:
        raise DivergenceError(f"{exc} [trunk={cfg.trunk} modality={cfg.modality} fusion={cfg.fusion} "
                              f"scheme={cfg.scheme} lr={cfg.lr} seed={cfg.seed}]", step=exc.step) from exc
    log.train_loss, log.val_loss = hist.train_loss, hist.val_loss
    return model, log


def evaluate(model: DiseaseModel, prepared: PreparedCohort) -> dict:
    out = {}
    for split in SPLITS:
        patients = prepared.split(split)
        if not patients:
            out[split] = None
            continue
        b = build_batch(patients, model.cfg)
        out[split] = split_metrics(model.predict(b), b.targets).to_dict()
    return out


def run_experiment(config: ExperimentConfig, cohort: Cohort, out_dir=None, data_dir: str = "",
                   keep_model: bool = False):
    """Train and evaluate one configuration; returns its RunLog (or a TrainedRun with ``keep_model``).

    With ``out_dir`` the run directory receives ``runlog.json``, ``config.txt`` and
    ``model.ckpt``.
    """
    start = time.perf_counter()
    prepared, dim = prepare_cohort(config, cohort)
    log = RunLog(config.to_dict(), data_dir=str(data_dir))
    log.splits = {s: [p.patient_id for p in prepared.split(s)] for s in SPLITS}
    model, log = train_model(config, prepared, dim, log)
    log.metrics = evaluate(model, prepared)
    log.wall_time = time.perf_counter() - start
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(dump_config(config))
        save_checkpoint(out / "model.ckpt", model.params())
        (out / "runlog.json").write_text(log.to_json())
    return TrainedRun(log, model, prepared) if keep_model else log


def load_run(run_dir, cohort: Cohort | None = None) -> TrainedRun:
    """Rebuild a trained model from a run directory; the cohort defaults to the logged data dir."""
    run = Path(run_dir)
    log = RunLog.from_json((run / "runlog.json").read_text())
    cfg = load_config(run / "config.txt")
    if cohort is None:
        cohort = load_cohort_dir(log.data_dir)
    prepared, dim = prepare_cohort(cfg, cohort)
    model = DiseaseModel(cfg, np.random.default_rng([cfg.seed, 1]), dim)
    saved = load_checkpoint(run / "model.ckpt")
    params = model.params()
    if set(saved) != set(params):
        raise ValueError(f"checkpoint parameters do not match config: {sorted(set(saved) ^ set(params))}")
    for name, t in params.items():
        t.data[...] = saved[name]
    return TrainedRun(log, model, prepared)


# ------------------------------------------------------------ ablation grid

CELLS = {
    "cde_structured": dict(trunk="cde", modality="structured", fusion="none"),
    "cde_multimodal": dict(trunk="cde", modality="multimodal", fusion="none"),
    "lstm_multimodal": dict(trunk="lstm", modality="multimodal", fusion="none"),
    "cde_fusion_sum": dict(trunk="cde", modality="multimodal", fusion="sum", pretrain=True,
                           scheme="hermite_backward"),
    "cde_fusion_concat": dict(trunk="cde", modality="multimodal", fusion="concat", pretrain=True,
                              scheme="hermite_backward"),
    "lstm_fusion_concat": dict(trunk="lstm", modality="multimodal", fusion="concat", pretrain=False),
    "cde_fusion_rectilinear": dict(trunk="cde", modality="multimodal", fusion="concat", pretrain=True,
                                   scheme="rectilinear"),
}

# (table, [(row label, cell, published train/val/test RMSE on OSIC, as printed)])
TABLES = [
    ("struct_vs_multi", [("Structured", "cde_structured", ("1.076", "1.054", "1.215")),
                         ("Multimodal", "cde_multimodal", ("0.4147", "0.6559", "0.5405"))]),
    ("multi_metrics", [("LSTM", "lstm_multimodal", ("0.5824", "0.8586", "1.396")),
                       ("Neural CDE", "cde_multimodal", ("0.4147", "0.6559", "0.5405"))]),
    ("fusion_metrics", [("Sum", "cde_fusion_sum", ("0.8879", "1.118", "0.902")),
                        ("Concatenation", "cde_fusion_concat", ("0.1360", "0.3465", "0.2912"))]),
    ("realdiffusionnet", [("LSTM Fusion", "lstm_fusion_concat", ("0.3038", "0.8191", "0.9066")),
                          ("Neural CDE Fusion", "cde_fusion_concat", ("0.1360", "0.3465", "0.2912"))]),
    ("spline", [("Cubic Hermite", "cde_fusion_concat", ("0.1360", "0.3465", "0.2912")),
                ("Rectilinear", "cde_fusion_rectilinear", ("0.1278", "0.3371", "0.2570"))]),
    ("PreVsFusion", [("Pretrained Neural CDE", "cde_structured", ("1.076", "1.054", "1.215")),
                     ("RealDiffFusionNet", "cde_fusion_rectilinear", ("0.1278", "0.3371", "0.2570"))]),
]

TABLE_HEADER = ["model", "train_rmse", "val_rmse", "test_rmse",
                "published (OSIC) train_rmse", "published (OSIC) val_rmse", "published (OSIC) test_rmse"]


def cell_config(base: ExperimentConfig, cell: str) -> ExperimentConfig:
    # every cell shares the base seed, so the split is common to all of them
    return base.replace(**CELLS[cell]).validate()


def _run_cell(args):
    base, cell, cohort, out_dir, data_dir = args
    log = run_experiment(cell_config(base, cell), cohort, Path(out_dir) / "cells" / cell, data_dir)
    return cell, log


def _fmt(x) -> str:
    return "" if x is None else f"{x:.4f}"


def build_tables(logs: dict[str, RunLog]) -> dict[str, list[list[str]]]:
    tables = {}
    for name, rows in TABLES:
        body = [TABLE_HEADER]
        for label, cell, published in rows:
            log = logs.get(cell)
            ours = [_fmt(log.rmse(s)) if log else "" for s in SPLITS]
            body.append([label, *ours, *published])
        tables[name] = body
    return tables


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def render_tables(tables: dict[str, list[list[str]]]) -> str:
    out = []
    for name, rows in tables.items():
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        out.append(f"== {name} ==")
        out += ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        out.append("")
    return "\n".join(out)


class GridError(RuntimeError):
    def __init__(self, msg, partial: dict):
        super().__init__(msg)
        self.partial = partial


def run_ablation_grid(base: ExperimentConfig, cohort: Cohort, out_dir, workers: int = 1,
                      data_dir: str = "") -> dict[str, list[list[str]]]:
    """Run every cell, then write ``tables/<name>.csv`` and ``report.txt`` under ``out_dir``.

    Cells are independent so ``workers > 1`` runs them in separate processes;
    results do not depend on the order they finish in.  A failing cell stops
    the grid; the tables are still written from the cells that finished.
    """
    out = Path(out_dir)
    (out / "tables").mkdir(parents=True, exist_ok=True)
    jobs = [(base, cell, cohort, str(out), str(data_dir)) for cell in CELLS]
    logs: dict[str, RunLog] = {}
    failure = None
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for cell, log in pool.map(_run_cell, jobs):
                    logs[cell] = log
        else:
            for job in jobs:
                cell, log = _run_cell(job)
                logs[cell] = log
    except Exception as exc:  # noqa: BLE001 - reported with partial results below
        failure = exc
    tables = build_tables(logs)
    for name, rows in tables.items():
        (out / "tables" / f"{name}.csv").write_text(_csv(rows))
    (out / "report.txt").write_text(render_tables(tables))
    if failure is not None:
        raise GridError(f"ablation grid aborted: {failure}", logs) from failure
    return tables


# ---------------------------------------------------------------- plot data

def _denorm(z, stats):
    return np.asarray(z) * stats.fvc_std + stats.fvc_mean


def write_actual_vs_pred(run: TrainedRun, path, predictions: dict | None = None) -> int:
    """One row per shifted example: ``patient_id,week,actual,predicted,split`` (mL).

    ``predictions`` maps split -> flat normalized predictions; defaults to the model's.
    """
    stats = run.prepared.stats
    rows = [["patient_id", "week", "actual", "predicted", "split"]]
    for split in SPLITS:
        patients = run.prepared.split(split)
        if not patients:
            continue
        b = build_batch(patients, run.model.cfg)
        pred = predictions[split] if predictions is not None else run.model.predict(b)
        actual, pred = _denorm(b.targets, stats), _denorm(pred, stats)
        k = 0
        for p in patients:
            for ex in p.examples:
                rows.append([p.patient_id, repr(ex.next_week), repr(float(actual[k])), repr(float(pred[k])), split])
                k += 1
    Path(path).write_text(_csv(rows))
    return len(rows) - 1


def _find_patient(run: TrainedRun, pid: str) -> PreparedPatient:
    for split in SPLITS:
        for p in run.prepared.split(split):
            if p.patient_id == pid:
                return p
    raise KeyError(f"unknown patient id {pid!r}")


def dense_batch(p: PreparedPatient, cfg: ExperimentConfig, weeks: np.ndarray, stats) -> Batch:
    """Single-patient batch evaluated at arbitrary weeks inside the input span (CDE trunk only)."""
    times = (np.asarray(weeks, dtype=np.float64) - stats.week_mean) / stats.week_std
    base = build_batch([p], cfg)
    plan = plan_solve([patient_path(p, cfg.scheme)], [times], cfg.substeps)
    return Batch(base.patient_ids, np.array([times.size]), times[None, :], np.zeros(times.size),
                 np.arange(times.size), base.static, base.images, plan, None)


def write_trajectory(run: TrainedRun, pid: str, path) -> int:
    """``week,predicted,observed`` in mL.

    Visit rows carry the observed FVC and the forecast that was issued for it
    at the previous visit.  For a CDE trunk, extra rows at 1-week spacing give
    the forecast issued at that week from the continuous state.
    """
    p = _find_patient(run, pid)
    stats, cfg = run.prepared.stats, run.model.cfg
    rows: dict[float, list] = {}
    visit_pred = _denorm(run.model.predict(build_batch([p], cfg)), stats)
    fvc = _denorm(p.fvc, stats)
    for i, w in enumerate(p.weeks):
        rows[float(w)] = [repr(float(visit_pred[i - 1])) if i else "", repr(float(fvc[i]))]
    if cfg.trunk == "cde":
        grid = np.arange(p.weeks[0], p.weeks[-2] + 1e-9, 1.0)
        dense = _denorm(run.model.predict(dense_batch(p, cfg, grid, stats)), stats)
        for w, y in zip(grid, dense):
            rows.setdefault(float(w), [repr(float(y)), ""])
    out = [["week", "predicted", "observed"]] + [[repr(w), *rows[w]] for w in sorted(rows)]
    Path(path).write_text(_csv(out))
    return len(out) - 1


def emit_plot_data(run: TrainedRun, out_dir, patient_ids: list[str] | None = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "actual_vs_pred.csv"]
    write_actual_vs_pred(run, files[0])
    for pid in patient_ids or []:
        files.append(out / f"trajectory_{pid}.csv")
        write_trajectory(run, pid, files[-1])
    return files
