"""Cohorts: synthetic generation, CSV/PGM ingest, patient-level split, preprocessing.

File layout of a cohort directory::

    measurements.csv   patient_id,week,fvc          (fvc in mL)
    manifest.csv       patient_id,age,sex,smoking_status,image_path
    images/<id>.pgm    one or more concatenated binary (P5) 8-bit slices
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .encoders import ImageRef
from .errors import ConfigError, FormatError

SEXES = ("Male", "Female")
SMOKING = ("Never smoked", "Ex-smoker", "Currently smokes")
MEASUREMENT_COLUMNS = ("patient_id", "week", "fvc")
MANIFEST_COLUMNS = ("patient_id", "age", "sex", "smoking_status", "image_path")


@dataclass
class PatientRecord:
    patient_id: str
    weeks: np.ndarray
    fvc: np.ndarray
    age: float
    sex: str
    smoking_status: str
    images: list[ImageRef] | None = None
    image_path: str = ""

    def __post_init__(self):
        self.weeks = np.asarray(self.weeks, dtype=np.float64)
        self.fvc = np.asarray(self.fvc, dtype=np.float64)
        if self.weeks.shape != self.fvc.shape:
            raise FormatError(f"{self.patient_id}: weeks/fvc length mismatch")
        if np.any(np.diff(self.weeks) <= 0):
            raise FormatError(f"{self.patient_id}: weeks must be strictly increasing")


@dataclass
class Cohort:
    records: list[PatientRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> list[str]:
        return [r.patient_id for r in self.records]

    def get(self, pid: str) -> PatientRecord:
        for r in self.records:
            if r.patient_id == pid:
                return r
        raise KeyError(f"unknown patient id {pid!r}")


# ----------------------------------------------------------------- synthetic

@dataclass
class SynthConfig:
    decline_median: float = 0.004   # per week
    decline_sigma: float = 0.6      # lognormal shape
    smoker_factor: tuple[float, float, float] = (1.0, 1.3, 1.8)
    smoking_probs: tuple[float, float, float] = (0.5, 0.35, 0.15)
    baseline_mean: float = 3000.0
    baseline_sd: float = 400.0
    noise: float = 0.01
    min_visits: int = 5
    max_visits: int = 12
    min_gap: float = 3.0
    max_gap: float = 12.0
    image_size: int = 32
    n_slices: int = 3
    image_noise: float = 0.05


def _synthetic_image(rng, level: float, size: int, noise: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1) - 0.5
    lung = np.exp(-((xx / 0.35) ** 2 + (yy / 0.45) ** 2))
    img = level * (0.6 + 0.4 * lung) + rng.normal(0.0, noise, (size, size))
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def generate_synthetic_cohort(n: int, seed: int, config: SynthConfig | None = None) -> Cohort:
    """Declining-FVC cohort whose CT surrogate brightness encodes the decline rate.

    Patient ``i`` is drawn from its own generator seeded by ``(seed, i)``.
    """
    cfg = config or SynthConfig()
    if n < 4:
        raise ConfigError("a cohort needs at least 4 patients so every split is non-empty")
    records = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        smoke = int(rng.choice(3, p=cfg.smoking_probs))
        sex = SEXES[int(rng.random() < 0.25)]
        age = round(float(rng.normal(67.0, 7.0)), 1)
        z = rng.normal()
        rate = cfg.decline_median * cfg.smoker_factor[smoke] * math.exp(cfg.decline_sigma * z)
        base = rng.normal(cfg.baseline_mean, cfg.baseline_sd)
        visits = int(rng.integers(cfg.min_visits, cfg.max_visits + 1))
        gaps = np.round(rng.uniform(cfg.min_gap, cfg.max_gap, visits - 1), 1)
        weeks = np.concatenate([[0.0], np.cumsum(gaps)])
        eps = rng.normal(0.0, cfg.noise, visits)
        fvc = np.round(base * np.exp(-rate * weeks) * (1.0 + eps), 1)
        level = float(np.clip(0.5 + 0.15 * (math.log(rate / cfg.decline_median)) / cfg.decline_sigma, 0.1, 0.9))
        images = [ImageRef(pixels=_synthetic_image(rng, level, cfg.image_size, cfg.image_noise))
                  for _ in range(cfg.n_slices)]
        pid = f"ID{i:05d}"
        records.append(PatientRecord(pid, weeks, fvc, age, sex, SMOKING[smoke], images,
                                     f"images/{pid}.pgm"))
    return Cohort(records)


# ---------------------------------------------------------------------- PGM

def write_pgm(path, images: list[np.ndarray]) -> None:
    """Concatenated 8-bit P5 images; pixel floats in [0, 1]."""
    out = bytearray()
    for img in images:
        h, w = img.shape
        out += f"P5\n{w} {h}\n255\n".encode("ascii")
        out += np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8).tobytes()
    Path(path).write_bytes(bytes(out))


def read_pgm(path) -> list[np.ndarray]:
    buf = Path(path).read_bytes()
    pos = 0
    images = []

    def token():
        nonlocal pos
        while pos < len(buf):
            ch = buf[pos:pos + 1]
            if ch == b"#":
                while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        return buf[start:pos]

    while True:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            break
        if token() != b"P5":
            raise FormatError(f"{path}: not a binary PGM (P5) image")
        try:
            w, h, maxval = int(token()), int(token()), int(token())
        except ValueError as exc:
            raise FormatError(f"{path}: bad PGM header") from exc
        pos += 1  # single whitespace after maxval
        if maxval >= 256:
            raise FormatError(f"{path}: only 8-bit PGM is supported")
        data = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=pos)
        pos += w * h
        images.append(data.reshape(h, w).astype(np.float64) / maxval)
    return images


# --------------------------------------------------------------------- CSVs

def _fmt(x: float) -> str:
    return repr(float(x))


def write_cohort(cohort: Cohort, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meas = ["patient_id,week,fvc"]
    man = ["patient_id,age,sex,smoking_status,image_path"]
    for r in cohort.records:
        for w, f in zip(r.weeks, r.fvc):
            meas.append(f"{r.patient_id},{_fmt(w)},{_fmt(f)}")
        path = r.image_path if r.images else ""
        if r.images:
            path = path or f"images/{r.patient_id}.pgm"
            (out / path).parent.mkdir(parents=True, exist_ok=True)
            write_pgm(out / path, [im.pixels for im in r.images])
        man.append(f"{r.patient_id},{_fmt(r.age)},{r.sex},{r.smoking_status},{path}")
    (out / "measurements.csv").write_text("\n".join(meas) + "\n")
    (out / "manifest.csv").write_text("\n".join(man) + "\n")


def _read_csv(path, columns) -> list[tuple[int, dict]]:
    text = Path(path).read_text()
    if not text.strip():
        return []
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in columns if c not in (reader.fieldnames or [])]
    if missing:
        raise FormatError(f"{path}: missing columns {missing}")
    return [(i, row) for i, row in enumerate(reader, start=2)]


def load_cohort_csv(measurements_path, manifest_path) -> Cohort:
    rows = _read_csv(measurements_path, MEASUREMENT_COLUMNS)
    if not rows:
        return Cohort([])
    series: dict[str, dict[float, float]] = {}
    for lineno, row in rows:
        pid = row["patient_id"]
        try:
            week = float(row["week"])
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{measurements_path} row {lineno}: non-numeric week {row['week']!r}") from exc
        try:
            fvc = float(row["fvc"])
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{measurements_path} row {lineno}: non-numeric fvc {row['fvc']!r}") from exc
        visits = series.setdefault(pid, {})
        if week in visits:
            warnings.warn(f"{pid}: duplicate week {week} (row {lineno}); keeping the last value")
        visits[week] = fvc
    base = Path(manifest_path).parent
    static: dict[str, dict] = {}
    for lineno, row in _read_csv(manifest_path, MANIFEST_COLUMNS[:4]):
        pid = row["patient_id"]
        if pid in static:
            raise FormatError(f"{manifest_path} row {lineno}: duplicate patient id {pid!r}")
        try:
            row["age"] = float(row["age"])
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{manifest_path} row {lineno}: non-numeric age") from exc
        static[pid] = row
    records = []
    for pid, visits in series.items():
        if pid not in static:
            raise FormatError(f"patient {pid!r} has measurements but no manifest row")
        meta = static[pid]
        weeks = np.array(sorted(visits))
        images = None
        img_path = (meta.get("image_path") or "").strip()
        if img_path:
            images = [ImageRef(pixels=p) for p in read_pgm(base / img_path)]
        records.append(PatientRecord(pid, weeks, np.array([visits[w] for w in weeks]), meta["age"],
                                     meta["sex"], meta["smoking_status"], images, img_path))
    return Cohort(records)


def load_cohort_dir(path) -> Cohort:
    p = Path(path)
    return load_cohort_csv(p / "measurements.csv", p / "manifest.csv")


# -------------------------------------------------------------------- split

def split_cohort(cohort: Cohort, seed: int) -> tuple[Cohort, Cohort, Cohort]:
    """Patient-level 70/20/10 split.

    Validation and test get ``floor(20%)`` and ``floor(10%)`` of the patients
    (at least one each); train gets the rest.
    """
    n = len(cohort)
    if n < 4:
        raise ConfigError("need at least 4 patients to split")
    n_val = max(1, (2 * n) // 10)
    n_test = max(1, n // 10)
    perm = np.random.default_rng(seed).permutation(n)
    pick = lambda idx: Cohort([cohort.records[i] for i in idx])  # noqa: E731
    n_train = n - n_val - n_test
    return pick(perm[:n_train]), pick(perm[n_train:n_train + n_val]), pick(perm[n_train + n_val:])


# ------------------------------------------------------------ preprocessing

@dataclass(frozen=True)
class NormStats:
    fvc_mean: float
    fvc_std: float
    week_mean: float
    week_std: float
    age_mean: float
    age_std: float
    sex_codes: dict = field(default_factory=dict)
    smoking_codes: dict = field(default_factory=dict)

    def code(self, table: dict, value: str) -> int:
        return table.get(value, len(table))  # reserved code for unseen categories

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class ShiftedExample:
    patient_id: str
    week: float
    next_week: float
    fvc: float      # normalized value at ``week``
    static: tuple
    target: float   # normalized value at ``next_week``


@dataclass
class PreparedPatient:
    patient_id: str
    weeks: np.ndarray    # raw weeks
    times: np.ndarray    # normalized weeks
    fvc: np.ndarray      # normalized fvc
    static: np.ndarray   # [age_z, sex_code, smoking_code]
    images: list[ImageRef] | None
    examples: list[ShiftedExample]

    @property
    def n_examples(self) -> int:
        return len(self.examples)

    @property
    def targets(self) -> np.ndarray:
        return self.fvc[1:]


@dataclass
class PreparedCohort:
    stats: NormStats
    train: list[PreparedPatient]
    val: list[PreparedPatient]
    test: list[PreparedPatient]

    def split(self, name: str) -> list[PreparedPatient]:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def compute_stats(train: Cohort) -> NormStats:
    if not len(train):
        raise ConfigError("training split is empty")
    fvc = np.concatenate([r.fvc for r in train.records])
    weeks = np.concatenate([r.weeks for r in train.records])
    ages = np.array([r.age for r in train.records])
    for name, arr in (("fvc", fvc), ("week", weeks), ("age", ages)):
        if arr.size < 2 or np.std(arr) == 0.0:
            raise ConfigError(f"continuous feature {name!r} has zero variance on the training split")
    sexes = sorted({r.sex for r in train.records})
    smoke = sorted({r.smoking_status for r in train.records})
    return NormStats(float(fvc.mean()), float(fvc.std()), float(weeks.mean()), float(weeks.std()),
                     float(ages.mean()), float(ages.std()),
                     {s: i for i, s in enumerate(sexes)}, {s: i for i, s in enumerate(smoke)})


def prepare_patient(r: PatientRecord, stats: NormStats) -> PreparedPatient:
    times = (r.weeks - stats.week_mean) / stats.week_std
    fvc = (r.fvc - stats.fvc_mean) / stats.fvc_std
    static = np.array([(r.age - stats.age_mean) / stats.age_std,
                       float(stats.code(stats.sex_codes, r.sex)),
                       float(stats.code(stats.smoking_codes, r.smoking_status))])
    examples = [ShiftedExample(r.patient_id, float(r.weeks[i]), float(r.weeks[i + 1]), float(fvc[i]),
                               tuple(float(s) for s in static), float(fvc[i + 1])) for i in range(len(r.weeks) - 1)]
    return PreparedPatient(r.patient_id, r.weeks.copy(), times, fvc, static, r.images, examples)


def preprocess(train: Cohort, val: Cohort, test: Cohort) -> PreparedCohort:
    """Label-encode, z-score with training statistics only, and build shifted examples.

    Patients with a single visit carry no target and are dropped.
    """
    stats = compute_stats(train)

    def prep(c: Cohort) -> list[PreparedPatient]:
        out = []
        for r in c.records:
            if len(r.weeks) < 2:
                warnings.warn(f"{r.patient_id}: fewer than 2 visits, no shifted target; skipped")
                continue
            out.append(prepare_patient(r, stats))
        return out

    return PreparedCohort(stats, prep(train), prep(val), prep(test))


def with_precomputed_images(cohort: Cohort, features: dict[str, np.ndarray]) -> Cohort:
    """Replace every patient's image slices with its precomputed feature vector."""
    recs = []
    for r in cohort.records:
        if r.patient_id not in features:
            raise FormatError(f"no precomputed features for patient {r.patient_id!r}")
        recs.append(replace(r, images=[ImageRef(features=features[r.patient_id])]))
    return Cohort(recs)
