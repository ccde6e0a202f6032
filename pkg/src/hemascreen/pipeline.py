"""Stage composition: images in, screenings out.

Per region: optional sclera-referenced illumination correction (conjunctiva),
CLAHE-assisted glare rejection, SLIC + colour-profile ROI selection, ICM mask
refinement, morphological cleanup, then feature extraction.  On top of that
sit bundle training and evaluation for the batch paths.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import features, models, preprocess, segment
from .dataset import SynthPatient, balance_classes, stratified_patient_split
from .features import FEATURE_LENGTH, FEATURE_NAMES, FEATURE_VERSION, REGIONS, FeatureVector
from .imaging import rgb_to_lab, rgb_to_ycbcr
from .models import CLASSES, DEFAULT_THRESHOLDS
from .preprocess import ClaheConfig
from .segment import ColorProfile


class ConfigError(ValueError):
    pass


_DEFAULT_PROFILES = {
    "nailbed": {"target": [58.0, 26.5, 15.0], "max_distance": 14.0, "min_area_fraction": 0.02},
    "conjunctiva": {"target": [55.0, 26.5, 12.0], "max_distance": 14.0, "min_area_fraction": 0.02},
    "tongue": {"target": [52.0, 26.5, 18.0], "max_distance": 14.0, "min_area_fraction": 0.02},
    "sclera": {"target": [96.0, 0.0, 4.0], "max_distance": 12.0, "min_area_fraction": 0.005},
}


@dataclass
class PipelineConfig:
    seed: int = 7
    clahe: ClaheConfig = field(default_factory=ClaheConfig)
    glare_window: int = 15
    glare_offset: float = 60.0
    morph_op: str = "open"
    structuring_element: str = "square3"
    crf_weight: float = 0.6
    crf_iters: int = 4
    slic_k: int = 48
    slic_compactness: float = 10.0
    slic_iters: int = 10
    profiles: dict = field(default_factory=lambda: {
        name: ColorProfile(tuple(p["target"]), p["max_distance"], p["min_area_fraction"])
        for name, p in _DEFAULT_PROFILES.items()
    })
    target_white: float = 230.0
    classifier_l2: float = 1e-3
    classifier_lr: float = 0.5
    classifier_epochs: int = 300
    balance_method: str = "smote"
    balance_k: int = 5
    thresholds: dict = field(default_factory=lambda: {
        g: dict(v) for g, v in DEFAULT_THRESHOLDS.items()
    })

    def __post_init__(self):
        if self.glare_window < 3 or self.glare_window % 2 == 0:
            raise ConfigError("glare window must be odd and >= 3")
        if self.morph_op not in ("erode", "dilate", "open", "close"):
            raise ConfigError(f"unknown morph op {self.morph_op!r}")
        if self.structuring_element not in preprocess.STRUCTURING_ELEMENTS:
            raise ConfigError(f"unknown structuring element {self.structuring_element!r}")
        if self.crf_weight < 0 or self.crf_iters < 0:
            raise ConfigError("crf weight and iters must be >= 0")
        if self.slic_k < 1 or self.slic_compactness <= 0 or self.slic_iters < 0:
            raise ConfigError("slic parameters out of range")
        if not 0 < self.target_white <= 255:
            raise ConfigError("target_white must lie in (0, 255]")
        if self.classifier_l2 < 0 or self.classifier_lr <= 0 or self.classifier_epochs < 1:
            raise ConfigError("classifier hyperparameters out of range")
        if self.balance_method not in ("smote", "rose"):
            raise ConfigError(f"unknown balancing method {self.balance_method!r}")
        missing = {*REGIONS, "sclera"} - set(self.profiles)
        if missing:
            raise ConfigError(f"profiles missing for {sorted(missing)}")
        models.validate_thresholds(self.thresholds)


def _require_keys(section: dict, allowed: set, where: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def config_from_dict(data: dict, base_dir: Path | None = None) -> PipelineConfig:
    """Build a validated config from parsed JSON; unknown keys are rejected."""
    _require_keys(data, {
        "seed", "clahe", "glare", "cleanup", "slic", "profiles",
        "illumination", "classifier", "balancing", "thresholds_path",
    }, "config")
    kwargs: dict = {}
    if "seed" in data:
        kwargs["seed"] = int(data["seed"])
    if "clahe" in data:
        section = data["clahe"]
        _require_keys(section, {"tiles_x", "tiles_y", "clip_limit"}, "clahe")
        try:
            kwargs["clahe"] = ClaheConfig(**section)
        except ValueError as exc:
            raise ConfigError(f"clahe: {exc}") from exc
    if "glare" in data:
        section = data["glare"]
        _require_keys(section, {"window", "offset"}, "glare")
        kwargs["glare_window"] = int(section.get("window", 15))
        kwargs["glare_offset"] = float(section.get("offset", 40.0))
    if "cleanup" in data:
        section = data["cleanup"]
        _require_keys(section, {"morph_op", "structuring_element", "crf_weight", "crf_iters"},
                      "cleanup")
        for key, target in (("morph_op", "morph_op"),
                            ("structuring_element", "structuring_element"),
                            ("crf_weight", "crf_weight"), ("crf_iters", "crf_iters")):
            if key in section:
                kwargs[target] = section[key]
    if "slic" in data:
        section = data["slic"]
        _require_keys(section, {"k", "compactness", "iters"}, "slic")
        if "k" in section:
            kwargs["slic_k"] = int(section["k"])
        if "compactness" in section:
            kwargs["slic_compactness"] = float(section["compactness"])
        if "iters" in section:
            kwargs["slic_iters"] = int(section["iters"])
    if "profiles" in data:
        profiles = {}
        for name, p in data["profiles"].items():
            if name not in (*REGIONS, "sclera"):
                raise ConfigError(f"profile for unknown region {name!r}")
            _require_keys(p, {"target", "max_distance", "min_area_fraction"}, f"profiles.{name}")
            try:
                profiles[name] = ColorProfile(tuple(p["target"]), float(p["max_distance"]),
                                              float(p["min_area_fraction"]))
            except ValueError as exc:
                raise ConfigError(f"profiles.{name}: {exc}") from exc
        defaults = PipelineConfig().profiles
        defaults.update(profiles)
        kwargs["profiles"] = defaults
    if "illumination" in data:
        section = data["illumination"]
        _require_keys(section, {"target_white"}, "illumination")
        kwargs["target_white"] = float(section.get("target_white", 230.0))
    if "classifier" in data:
        section = data["classifier"]
        _require_keys(section, {"l2", "lr", "epochs"}, "classifier")
        kwargs["classifier_l2"] = float(section.get("l2", 1e-3))
        kwargs["classifier_lr"] = float(section.get("lr", 0.5))
        kwargs["classifier_epochs"] = int(section.get("epochs", 300))
    if "balancing" in data:
        section = data["balancing"]
        _require_keys(section, {"method", "k"}, "balancing")
        kwargs["balance_method"] = section.get("method", "smote")
        kwargs["balance_k"] = int(section.get("k", 5))
    if "thresholds_path" in data:
        path = Path(data["thresholds_path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            kwargs["thresholds"] = models.load_thresholds(path)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"thresholds_path: {exc}") from exc
    return PipelineConfig(**kwargs)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data, base_dir=path.parent)


# --------------------------------------------------------------- region pass

@dataclass
class RegionResult:
    region: str
    features: FeatureVector
    mask: np.ndarray
    area_fraction: float
    roi_confident: bool
    illumination_corrected: bool = False


def run_region_pipeline(
    img: np.ndarray,
    region: str,
    config: PipelineConfig,
    altitude_m: float | None = None,
    age_years: float | None = None,
) -> RegionResult:
    corrected = img
    illum_done = False
    if region == "conjunctiva":
        L, a, b = rgb_to_lab(img)
        labels = segment.slic(L, a, b, config.slic_k, config.slic_compactness,
                              config.slic_iters)
        sclera = segment.select_roi(labels, L, a, b, config.profiles["sclera"])
        if sclera.confident:
            corrected = preprocess.correct_illumination(img, sclera.mask,
                                                        config.target_white)
            illum_done = True

    # equalization spreads local contrast so the threshold can pick up bright
    # spots; opening drops incoherent speckle, keeping only blob-like glare
    y_plane, _, _ = rgb_to_ycbcr(corrected)
    y_eq = preprocess.clahe(y_plane, config.clahe)
    glare = preprocess.adaptive_threshold(y_eq, config.glare_window, config.glare_offset)
    glare = preprocess.morph(glare, "open", "square3")
    glare = preprocess.morph(glare, "dilate", "square3")

    L, a, b = rgb_to_lab(corrected)
    labels = segment.slic(L, a, b, config.slic_k, config.slic_compactness,
                          config.slic_iters)
    selection = segment.select_roi(labels, L, a, b, config.profiles[region])

    base = selection.mask & ~glare
    unary = np.where(base, 0.9, 0.1)
    refined = preprocess.crf_refine(unary, config.crf_weight, config.crf_iters)
    final = preprocess.morph(refined, config.morph_op, config.structuring_element)

    fv = features.extract(corrected, final, region, altitude_m, age_years)
    return RegionResult(
        region=region,
        features=fv,
        mask=final,
        area_fraction=float(final.mean()),
        roi_confident=selection.confident and bool(final.any()),
        illumination_corrected=illum_done,
    )


# ---------------------------------------------------------------- screening

@dataclass
class ScreeningResult:
    per_region: dict           # region -> {"class": str|None, "probabilities": [..], ...}
    fused_class: str
    raw_hb: float
    calibrated_hb: float
    severity: str
    flags: list
    vectors: dict = field(default_factory=dict)  # region -> FeatureVector

    def to_dict(self) -> dict:
        return {
            "per_region": self.per_region,
            "fused_class": self.fused_class,
            "raw_hb": round(self.raw_hb, 4),
            "calibrated_hb": round(self.calibrated_hb, 4),
            "severity": self.severity,
            "flags": self.flags,
        }


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


def screen_patient(
    images: dict,
    bundle: models.ModelBundle,
    config: PipelineConfig,
    age_years: float,
    sex: str,
    pregnant: bool,
    altitude_m: float | None = None,
    calibration: models.CalibrationParams | None = None,
) -> ScreeningResult:
    """Full screening for one patient from their latest region images."""
    if not images:
        raise PipelineError("ingest", "no region images supplied")
    unknown = set(images) - set(REGIONS)
    if unknown:
        raise PipelineError("ingest", f"unknown regions {sorted(unknown)}")

    per_region = {}
    vectors: dict = {}
    region_classes: dict = {region: None for region in REGIONS}
    flags = set()
    for region in REGIONS:
        if region not in images:
            flags.add(f"missing_region:{region}")
            per_region[region] = None
            continue
        try:
            result = run_region_pipeline(images[region], region, config,
                                         altitude_m, age_years)
        except Exception as exc:  # surface the failing stage
            raise PipelineError(f"segment:{region}", str(exc)) from exc
        vectors[region] = result.features
        entry = {
            "class": None,
            "probabilities": None,
            "area_fraction": round(result.area_fraction, 4),
            "roi_confident": result.roi_confident,
            "valid": result.features.valid,
            "illumination_corrected": result.illumination_corrected,
        }
        if result.features.valid:
            cls, probs = models.classify(bundle.classifier, result.features.values,
                                         feature_version=bundle.feature_version)
            entry["class"] = cls
            entry["probabilities"] = [round(float(p), 6) for p in probs]
            region_classes[region] = cls
        else:
            flags.add(f"region_invalid:{region}")
        if not result.roi_confident:
            flags.add(f"low_roi_confidence:{region}")
        per_region[region] = entry

    if all(cls is None for cls in region_classes.values()):
        raise PipelineError("classify", "no region produced a valid feature vector")

    fused = models.fuse_majority(region_classes["nailbed"], region_classes["conjunctiva"],
                                 region_classes["tongue"])
    raw_hb, reduced = models.predict_hb(bundle, vectors, fused)
    if reduced:
        flags.add("reduced_confidence")

    calibration = calibration or models.CalibrationParams()
    calibrated = calibration.apply(raw_hb)
    severity = models.diagnose(calibrated, age_years, sex, pregnant, bundle.thresholds)
    return ScreeningResult(per_region, fused, raw_hb, calibrated, severity,
                           sorted(flags), vectors)


# ---------------------------------------------------------------- training

@dataclass
class TrainingRow:
    patient_id: str
    hb: float
    cls: str
    age_years: float
    sex: str
    pregnant: bool
    altitude_m: float
    vectors: dict  # region -> np.ndarray(FEATURE_LENGTH)

    def concat(self) -> np.ndarray:
        return np.concatenate([self.vectors[r] for r in REGIONS])


def rows_from_patients(
    patients: list[SynthPatient],
    config: PipelineConfig,
    thresholds: dict | None = None,
    jobs: int = 1,
) -> tuple[list[TrainingRow], list[str]]:
    """Run the region pipeline over a corpus; skips patients with any invalid region."""
    thresholds = thresholds or config.thresholds

    def process(p: SynthPatient):
        vectors = {}
        for region in REGIONS:
            if region not in p.images:
                return p.patient_id, None
            result = run_region_pipeline(p.images[region], region, config,
                                         p.altitude_m, p.age_years)
            if not result.features.valid:
                return p.patient_id, None
            vectors[region] = result.features.values
        cls = models.diagnose(p.hb, p.age_years, p.sex, p.pregnant, thresholds)
        return p.patient_id, TrainingRow(p.patient_id, p.hb, cls, p.age_years,
                                         p.sex, p.pregnant, p.altitude_m, vectors)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(process, patients))
    else:
        outcomes = [process(p) for p in patients]
    rows = [row for _, row in outcomes if row is not None]
    skipped = [pid for pid, row in outcomes if row is None]
    return rows, skipped


def training_rows_to_csv(rows: list[TrainingRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    header = ["patient_id", "hb", "class", "age_years", "sex", "pregnant", "altitude_m"]
    for region in REGIONS:
        header.extend(f"{region}_{name}" for name in FEATURE_NAMES)
    writer.writerow(header)
    for row in rows:
        record = [row.patient_id, row.hb, row.cls, row.age_years, row.sex,
                  int(row.pregnant), row.altitude_m]
        for region in REGIONS:
            record.extend(repr(float(v)) for v in row.vectors[region])
        writer.writerow(record)
    return buf.getvalue()


def training_rows_from_csv(text: str) -> list[TrainingRow]:
    rows = []
    for record in csv.DictReader(io.StringIO(text)):
        vectors = {
            region: np.array([float(record[f"{region}_{name}"]) for name in FEATURE_NAMES])
            for region in REGIONS
        }
        rows.append(TrainingRow(
            patient_id=record["patient_id"], hb=float(record["hb"]), cls=record["class"],
            age_years=float(record["age_years"]), sex=record["sex"],
            pregnant=bool(int(record["pregnant"])), altitude_m=float(record["altitude_m"]),
            vectors=vectors,
        ))
    return rows


def train_bundle(
    rows: list[TrainingRow],
    config: PipelineConfig,
    bundle_version: int = 1,
    metrics: dict | None = None,
) -> models.ModelBundle:
    """Classifier on per-region vectors, one Huber regressor per severity class.

    Balancing happens here, inside the training fold, never before a split.
    """
    if not rows:
        raise ValueError("no training rows")
    region_rows = np.array([row.vectors[region] for row in rows for region in REGIONS])
    region_labels = [row.cls for row in rows for _ in REGIONS]
    balanced_rows, balanced_labels = balance_classes(
        region_rows, region_labels, config.balance_method, config.seed, config.balance_k
    )
    classifier = models.train_classifier(
        balanced_rows, balanced_labels, l2=config.classifier_l2,
        lr=config.classifier_lr, epochs=config.classifier_epochs, seed=config.seed,
    )

    concat_dim = 3 * FEATURE_LENGTH
    regressors = {}
    for cls in CLASSES:
        members = [row for row in rows if row.cls == cls]
        if len(members) < 2:
            raise ValueError(f"need at least 2 patients of class {cls!r}, got {len(members)}")
        x = np.array([row.concat() for row in members])
        y = np.array([row.hb for row in members])
        needed = concat_dim + 2
        if len(members) < needed:
            # oversample jointly in (features, target) space to satisfy the
            # regressor's sample floor; interpolation keeps the signal linear
            joined = np.hstack([x, y[:, None]])
            balanced, _ = balance_classes(joined, [cls] * len(members), config.balance_method,
                                          config.seed + 17, config.balance_k,
                                          min_count=needed)
            x, y = balanced[:, :-1], balanced[:, -1]
        regressors[cls] = models.train_regressor(x, y, cls)

    return models.ModelBundle(
        classifier=classifier,
        regressors=regressors,
        thresholds={g: dict(v) for g, v in config.thresholds.items()},
        feature_version=FEATURE_VERSION,
        bundle_version=bundle_version,
        metrics=metrics or {},
        training_csv=training_rows_to_csv(rows),
    )


def predict_row(bundle: models.ModelBundle, row: TrainingRow) -> dict:
    """Classifier + fused regression for one already-extracted patient row."""
    region_classes = {}
    vectors = {}
    for region in REGIONS:
        fv = FeatureVector(row.vectors[region], region)
        vectors[region] = fv
        cls, _ = models.classify(bundle.classifier, fv.values,
                                 feature_version=bundle.feature_version)
        region_classes[region] = cls
    fused = models.fuse_majority(region_classes["nailbed"], region_classes["conjunctiva"],
                                 region_classes["tongue"])
    raw_hb, _ = models.predict_hb(bundle, vectors, fused)
    severity = models.diagnose(raw_hb, row.age_years, row.sex, row.pregnant,
                               bundle.thresholds)
    return {
        "patient_id": row.patient_id,
        "true_hb": row.hb,
        "predicted_hb": raw_hb,
        "true_class": row.cls,
        "fused_class": fused,
        "predicted_class": severity,
    }


def evaluate_bundle(bundle: models.ModelBundle, rows: list[TrainingRow]) -> dict:
    """Spearman rho, MAE and 3-class severity accuracy plus a confusion matrix."""
    if not rows:
        raise ValueError("no evaluation rows")
    predictions = [predict_row(bundle, row) for row in rows]
    true_hb = np.array([p["true_hb"] for p in predictions])
    pred_hb = np.array([p["predicted_hb"] for p in predictions])
    rho = float(stats.spearmanr(true_hb, pred_hb).statistic) if len(rows) > 1 else 0.0
    mae = float(np.abs(true_hb - pred_hb).mean())
    hits = sum(p["true_class"] == p["predicted_class"] for p in predictions)
    confusion = {t: {p: 0 for p in CLASSES} for t in CLASSES}
    for p in predictions:
        confusion[p["true_class"]][p["predicted_class"]] += 1
    return {
        "n": len(rows),
        "spearman_rho": round(rho, 6),
        "mae_g_dl": round(mae, 6),
        "class_accuracy": round(hits / len(rows), 6),
        "confusion": confusion,
        "predictions": predictions,
    }


def split_rows(rows: list[TrainingRow], test_fraction: float, seed: int):
    train_ids, test_ids = stratified_patient_split(
        [row.patient_id for row in rows], [row.cls for row in rows], test_fraction, seed
    )
    train = [row for row in rows if row.patient_id in set(train_ids)]
    test = [row for row in rows if row.patient_id in set(test_ids)]
    return train, test
