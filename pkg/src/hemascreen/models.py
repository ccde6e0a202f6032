"""Screening models: 3-class classifier, majority fusion, per-class robust
regression, personal calibration and threshold-table diagnosis.

The classifier is multinomial logistic regression trained by full-batch
gradient descent; the regressors are iteratively reweighted least squares
with Huber weights.  Threshold numbers are configuration, loaded from a
human-editable JSON file; the shipped defaults follow the WHO severity bands.
"""

from __future__ import annotations

import datetime
import json
import zipfile
from dataclasses import dataclass, field
from io import BytesIO

import numpy as np

from .features import FEATURE_LENGTH, FEATURE_VERSION, REGIONS, FeatureVector

CLASSES = ("severe", "mild", "non_anaemic")  # most severe first

GROUPS = (
    "child_u5",
    "child_5_11",
    "child_12_14",
    "woman_nonpregnant",
    "woman_pregnant",
    "man",
)

# defaults per the WHO haemoglobin severity bands (g/dL); configuration, not claims
DEFAULT_THRESHOLDS = {
    "child_u5": {"severe_below": 7.0, "mild_below": 11.0},
    "child_5_11": {"severe_below": 8.0, "mild_below": 11.5},
    "child_12_14": {"severe_below": 8.0, "mild_below": 12.0},
    "woman_nonpregnant": {"severe_below": 8.0, "mild_below": 12.0},
    "woman_pregnant": {"severe_below": 7.0, "mild_below": 11.0},
    "man": {"severe_below": 8.0, "mild_below": 13.0},
}


class FeatureVersionError(ValueError):
    pass


# ---------------------------------------------------------------- classifier

@dataclass
class ClassifierModel:
    weights: np.ndarray  # (3, d + 1), bias in the last column
    feature_means: np.ndarray
    feature_stds: np.ndarray
    feature_version: str = FEATURE_VERSION
    n_samples: int = 0
    seed: int = 0

    @property
    def n_features(self) -> int:
        return self.weights.shape[1] - 1


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _ce_loss(w, xb, onehot, l2):
    probs = softmax(xb @ w.T)
    nll = -np.log(np.clip((probs * onehot).sum(axis=1), 1e-300, None)).mean()
    return nll + l2 * float((w[:, :-1] ** 2).sum())


def train_classifier(
    rows: np.ndarray,
    labels: list,
    l2: float = 1e-3,
    lr: float = 0.5,
    epochs: int = 300,
    seed: int = 0,
    feature_version: str = FEATURE_VERSION,
) -> ClassifierModel:
    """Multinomial logistic regression via full-batch gradient descent.

    The learning rate is halved whenever a step would increase the loss
    (at most 20 backoffs), so the training loss is non-increasing.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if l2 < 0:
        raise ValueError("l2 must be >= 0")
    missing = [c for c in CLASSES if c not in labels]
    if missing:
        raise ValueError(f"classes absent from training data: {missing}")
    unknown = set(labels) - set(CLASSES)
    if unknown:
        raise ValueError(f"unknown class labels: {sorted(unknown)}")

    means = rows.mean(axis=0)
    stds = rows.std(axis=0)
    stds[stds == 0] = 1.0
    xs = (rows - means) / stds
    xb = np.hstack([xs, np.ones((len(xs), 1))])
    onehot = np.zeros((len(labels), len(CLASSES)))
    for i, lab in enumerate(labels):
        onehot[i, CLASSES.index(lab)] = 1.0

    w = np.zeros((len(CLASSES), xb.shape[1]))
    loss = _ce_loss(w, xb, onehot, l2)
    backoffs = 0
    for _ in range(epochs):
        probs = softmax(xb @ w.T)
        grad = (probs - onehot).T @ xb / len(xb)
        grad[:, :-1] += 2 * l2 * w[:, :-1]
        while True:
            candidate = w - lr * grad
            new_loss = _ce_loss(candidate, xb, onehot, l2)
            if new_loss <= loss:
                w, loss = candidate, new_loss
                break
            lr /= 2
            backoffs += 1
            if backoffs >= 20:
                break
        if backoffs >= 20:
            break

    return ClassifierModel(w, means, stds, feature_version, len(rows), seed)


def classify(
    model: ClassifierModel, vec: np.ndarray, feature_version: str | None = None
) -> tuple[str, np.ndarray]:
    """Class name and the 3 class probabilities (order: severe, mild, non).

    Argmax ties go to the more severe class.
    """
    if feature_version is not None and feature_version != model.feature_version:
        raise FeatureVersionError(
            f"model built for {model.feature_version}, got {feature_version}"
        )
    vec = np.asarray(vec, dtype=np.float64).ravel()
    if vec.size != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {vec.size}")
    xs = (vec - model.feature_means) / model.feature_stds
    logits = model.weights @ np.append(xs, 1.0)
    probs = softmax(logits)
    best = int(np.argmax(probs))  # argmax returns the first (= most severe) on ties
    return CLASSES[best], probs


def fuse_majority(nail: str | None, conj: str | None, tongue: str | None) -> str:
    """2-of-3 vote across regions; the conjunctiva arbitrates disagreement.

    A missing nailbed or tongue label is filled with the conjunctiva's; if
    the conjunctiva itself is missing, agreement wins, otherwise the more
    severe of the remaining labels.
    """
    for lab in (nail, conj, tongue):
        if lab is not None and lab not in CLASSES:
            raise ValueError(f"unknown class {lab!r}")
    if conj is None:
        present = [lab for lab in (nail, tongue) if lab is not None]
        if not present:
            raise ValueError("no region labels to fuse")
        if len(present) == 1 or present[0] == present[1]:
            return present[0]
        return min(present, key=CLASSES.index)
    nail = nail if nail is not None else conj
    tongue = tongue if tongue is not None else conj
    votes = [nail, conj, tongue]
    for cls in CLASSES:
        if votes.count(cls) >= 2:
            return cls
    return conj


# ---------------------------------------------------------------- regressors

@dataclass
class RegressorModel:
    coefficients: np.ndarray
    intercept: float
    tau: float
    class_name: str
    feature_means: np.ndarray  # raw-space training means, used for imputation
    n_samples: int = 0
    irls_steps: list = field(default_factory=list)  # (loss before, loss after)


def _huber_loss(residuals: np.ndarray, delta: float) -> float:
    a = np.abs(residuals)
    quad = a <= delta
    return float((0.5 * residuals[quad] ** 2).sum() + (delta * (a[~quad] - 0.5 * delta)).sum())


def _solve_normal(xtx: np.ndarray, xty: np.ndarray) -> np.ndarray:
    if np.linalg.cond(xtx) > 1e12:
        xtx = xtx + 1e-9 * np.eye(len(xtx))
    try:
        beta = np.linalg.solve(xtx, xty)
    except np.linalg.LinAlgError:
        beta = np.linalg.solve(xtx + 1e-9 * np.eye(len(xtx)), xty)
    if not np.all(np.isfinite(beta)):
        beta = np.linalg.solve(xtx + 1e-9 * np.eye(len(xtx)), xty)
    return beta


def train_regressor(
    rows: np.ndarray,
    targets: np.ndarray,
    class_name: str,
    max_iters: int = 50,
    coef_tol: float = 1e-8,
) -> RegressorModel:
    """Huber IRLS linear regression for one severity class.

    The scale is re-estimated each sweep as 1.4826 * MAD of the residuals
    (delta = 1.345 * scale); each reweighted solve must not increase the
    Huber objective at the current scale.
    """
    rows = np.asarray(rows, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if class_name not in CLASSES:
        raise ValueError(f"unknown class {class_name!r}")
    n, d = rows.shape
    if len(targets) != n:
        raise ValueError("rows and targets must align")
    if n < d + 2:
        raise ValueError(f"need at least {d + 2} samples, got {n}")

    raw_means = rows.mean(axis=0)
    if np.ptp(targets) == 0.0:
        return RegressorModel(np.zeros(d), float(targets[0]), 1e-6, class_name,
                              raw_means, n)

    stds = rows.std(axis=0)
    stds[stds == 0] = 1.0
    xs = (rows - raw_means) / stds
    xb = np.hstack([xs, np.ones((n, 1))])

    beta = _solve_normal(xb.T @ xb, xb.T @ targets)
    steps = []
    for _ in range(max_iters):
        resid = targets - xb @ beta
        med = np.median(resid)
        mad = np.median(np.abs(resid - med))
        tau = 1.4826 * mad
        if tau < 1e-12:
            break
        delta = 1.345 * tau
        weights = np.where(np.abs(resid) <= delta, 1.0, delta / np.abs(resid))
        loss_before = _huber_loss(resid, delta)
        xw = xb * weights[:, None]
        new_beta = _solve_normal(xw.T @ xb, xw.T @ targets)
        loss_after = _huber_loss(targets - xb @ new_beta, delta)
        if loss_after > loss_before * (1 + 1e-9) + 1e-9:
            # collinear designs can make the jittered solve wobble; keep the
            # current coefficients rather than take a non-descending step
            break
        steps.append((loss_before, loss_after))
        change = np.abs(new_beta - beta).max()
        beta = new_beta
        if change < coef_tol:
            break
    else:
        resid = targets - xb @ beta
        tau = max(1.4826 * float(np.median(np.abs(resid - np.median(resid)))), 1e-6)

    tau = max(tau, 1e-6)
    coef = beta[:-1] / stds
    intercept = float(beta[-1] - (beta[:-1] * raw_means / stds).sum())
    return RegressorModel(coef, intercept, float(tau), class_name, raw_means, n, steps)


def predict_regressor(model: RegressorModel, vec: np.ndarray) -> float:
    vec = np.asarray(vec, dtype=np.float64).ravel()
    if vec.size != model.coefficients.size:
        raise ValueError(f"expected {model.coefficients.size} features, got {vec.size}")
    return float(model.coefficients @ vec + model.intercept)


# ---------------------------------------------------------------- calibration

@dataclass(frozen=True)
class CalibrationParams:
    gain: float = 1.0
    offset: float = 0.0
    n_points: int = 0

    def apply(self, raw_hb: float) -> float:
        return self.gain * raw_hb + self.offset


def fit_calibration(history: list[tuple[float, float]]) -> CalibrationParams:
    """Least-squares line mapping raw predictions onto lab haemoglobin values.

    One point fits an offset only; an empty history is the identity.  The
    gain is clamped to [0.25, 4] so calibration can never flip orderings.
    """
    if not history:
        return CalibrationParams(1.0, 0.0, 0)
    raw = np.array([p[0] for p in history], dtype=np.float64)
    lab = np.array([p[1] for p in history], dtype=np.float64)
    if len(history) == 1:
        return CalibrationParams(1.0, float(lab[0] - raw[0]), 1)
    var = float(((raw - raw.mean()) ** 2).sum())
    if var == 0.0:
        gain = 1.0
    else:
        gain = float(((raw - raw.mean()) * (lab - lab.mean())).sum() / var)
        gain = min(max(gain, 0.25), 4.0)
    offset = float(lab.mean() - gain * raw.mean())
    return CalibrationParams(gain, offset, len(history))


# ---------------------------------------------------------------- thresholds

def validate_thresholds(table: dict) -> dict:
    if set(table) != set(GROUPS):
        raise ValueError(f"threshold table must cover exactly the groups {GROUPS}")
    for group, row in table.items():
        severe, mild = row["severe_below"], row["mild_below"]
        if not (0 < severe < mild):
            raise ValueError(f"{group}: need 0 < severe_below < mild_below")
    return table


def load_thresholds(path) -> dict:
    with open(path) as fh:
        return validate_thresholds(json.load(fh))


def save_thresholds(table: dict, path) -> None:
    validate_thresholds(table)
    with open(path, "w") as fh:
        json.dump(table, fh, indent=2, sort_keys=True)
        fh.write("\n")


def demographic_group(age_years: float, sex: str, pregnant: bool) -> str:
    if sex not in ("female", "male"):
        raise ValueError(f"unknown sex {sex!r}")
    if pregnant and sex != "female":
        raise ValueError("pregnant flag requires sex=female")
    if age_years < 0:
        raise ValueError("age must be >= 0")
    if age_years < 5:
        return "child_u5"
    if age_years < 12:
        return "child_5_11"
    if age_years < 15:
        return "child_12_14"
    if sex == "female":
        return "woman_pregnant" if pregnant else "woman_nonpregnant"
    return "man"


def diagnose(hb: float, age_years: float, sex: str, pregnant: bool, table: dict) -> str:
    """Severity class for a haemoglobin value; boundaries go to the less severe class."""
    group = demographic_group(age_years, sex, pregnant)
    if group not in table:
        raise ValueError(f"threshold table has no row for group {group!r}")
    row = table[group]
    if hb < row["severe_below"]:
        return "severe"
    if hb < row["mild_below"]:
        return "mild"
    return "non_anaemic"


# ---------------------------------------------------------------- bundle

@dataclass
class ModelBundle:
    classifier: ClassifierModel
    regressors: dict  # class name -> RegressorModel
    thresholds: dict
    feature_version: str = FEATURE_VERSION
    bundle_version: int = 1
    trained_at: str = ""
    metrics: dict = field(default_factory=dict)
    training_csv: str = ""  # raw training rows, kept for retraining

    def __post_init__(self):
        if set(self.regressors) != set(CLASSES):
            raise ValueError("bundle needs one regressor per class")
        if not self.trained_at:
            self.trained_at = datetime.datetime.now(datetime.timezone.utc).isoformat()


def predict_hb(
    bundle: ModelBundle, vectors: dict, fused_class: str
) -> tuple[float, bool]:
    """Raw haemoglobin estimate from the fused class's regressor.

    Input is the concatenated (nailbed, conjunctiva, tongue) vector; invalid
    or missing regions are imputed with the regressor's training means and
    flag the result as reduced-confidence.
    """
    if fused_class not in CLASSES:
        raise ValueError(f"unknown class {fused_class!r}")
    regressor = bundle.regressors[fused_class]
    parts = []
    reduced = False
    n_valid = 0
    for i, region in enumerate(REGIONS):
        fv = vectors.get(region)
        if isinstance(fv, FeatureVector) and fv.valid:
            parts.append(fv.values)
            n_valid += 1
        else:
            parts.append(regressor.feature_means[i * FEATURE_LENGTH : (i + 1) * FEATURE_LENGTH])
            reduced = True
    if n_valid == 0:
        raise ValueError("no valid region features to predict from")
    return predict_regressor(regressor, np.concatenate(parts)), reduced


def _classifier_npz(model: ClassifierModel) -> bytes:
    buf = BytesIO()
    np.savez(
        buf,
        weights=model.weights,
        feature_means=model.feature_means,
        feature_stds=model.feature_stds,
        n_samples=model.n_samples,
        seed=model.seed,
    )
    return buf.getvalue()


def _regressor_npz(model: RegressorModel) -> bytes:
    buf = BytesIO()
    np.savez(
        buf,
        coefficients=model.coefficients,
        intercept=model.intercept,
        tau=model.tau,
        feature_means=model.feature_means,
        n_samples=model.n_samples,
    )
    return buf.getvalue()


def save_bundle(bundle: ModelBundle, path) -> None:
    manifest = {
        "bundle_version": bundle.bundle_version,
        "feature_version": bundle.feature_version,
        "trained_at": bundle.trained_at,
        "classes": list(CLASSES),
        "metrics": bundle.metrics,
        "classifier_samples": bundle.classifier.n_samples,
    }
    entries = [
        ("manifest.json", json.dumps(manifest, indent=2, sort_keys=True).encode()),
        ("thresholds.json", json.dumps(bundle.thresholds, indent=2, sort_keys=True).encode()),
        ("classifier.npz", _classifier_npz(bundle.classifier)),
    ]
    for cls in CLASSES:
        entries.append((f"regressor_{cls}.npz", _regressor_npz(bundle.regressors[cls])))
    if bundle.training_csv:
        entries.append(("training_data.csv", bundle.training_csv.encode()))
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, data in entries:
            # fixed entry timestamps keep archives byte-reproducible
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, data)


def load_bundle(path) -> ModelBundle:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest["feature_version"] != FEATURE_VERSION:
            raise FeatureVersionError(
                f"bundle built for {manifest['feature_version']}, "
                f"library speaks {FEATURE_VERSION}"
            )
        thresholds = validate_thresholds(json.loads(zf.read("thresholds.json")))
        cdata = np.load(BytesIO(zf.read("classifier.npz")))
        classifier = ClassifierModel(
            weights=cdata["weights"],
            feature_means=cdata["feature_means"],
            feature_stds=cdata["feature_stds"],
            feature_version=manifest["feature_version"],
            n_samples=int(cdata["n_samples"]),
            seed=int(cdata["seed"]),
        )
        regressors = {}
        for cls in CLASSES:
            rdata = np.load(BytesIO(zf.read(f"regressor_{cls}.npz")))
            regressors[cls] = RegressorModel(
                coefficients=rdata["coefficients"],
                intercept=float(rdata["intercept"]),
                tau=float(rdata["tau"]),
                class_name=cls,
                feature_means=rdata["feature_means"],
                n_samples=int(rdata["n_samples"]),
            )
        training_csv = ""
        if "training_data.csv" in zf.namelist():
            training_csv = zf.read("training_data.csv").decode()
    return ModelBundle(
        classifier=classifier,
        regressors=regressors,
        thresholds=thresholds,
        feature_version=manifest["feature_version"],
        bundle_version=int(manifest["bundle_version"]),
        trained_at=manifest["trained_at"],
        metrics=manifest.get("metrics", {}),
        training_csv=training_csv,
    )
