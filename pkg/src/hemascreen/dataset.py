"""Training-set construction: augmentation, oversampling, splits and the
synthetic screening corpus.

Class balancing works on feature rows, never on raw pixels, and always on a
training fold that the caller has already split off, so synthetic rows cannot
leak into evaluation data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging, imgio
from .features import REGIONS

# augmentation ---------------------------------------------------------------

_BLUR_WORDS = ("blur", "diffuse", "diffusion", "smooth", "noise")


class AugmentPlanError(ValueError):
    pass


def parse_augment_plan(entries: list) -> list[tuple[str, np.ndarray | None]]:
    """Validate a plan of geometric ops; intensity-distorting ops are refused."""
    if not entries:
        raise AugmentPlanError("augmentation plan is empty")
    plan = []
    for entry in entries:
        if isinstance(entry, str):
            name = entry.lower()
            if any(word in name for word in _BLUR_WORDS):
                raise AugmentPlanError(
                    f"{entry!r} distorts pixel intensities and is not allowed"
                )
            if name not in ("flip_h", "flip_v", "rot90"):
                raise AugmentPlanError(f"unknown augmentation op {entry!r}")
            plan.append((name, None))
        elif isinstance(entry, dict) and set(entry) == {"affine"}:
            matrix = np.asarray(entry["affine"], dtype=np.float64)
            if matrix.shape != (2, 3):
                raise AugmentPlanError("affine entry must be a 2x3 matrix")
            plan.append(("affine", matrix))
        else:
            raise AugmentPlanError(f"malformed plan entry {entry!r}")
    return plan


def augment_images(img: np.ndarray, plan: list) -> list[np.ndarray]:
    """One output image per parsed plan entry."""
    parsed = parse_augment_plan(plan) if plan and isinstance(plan[0], (str, dict)) else plan
    if not parsed:
        raise AugmentPlanError("augmentation plan is empty")
    return [imaging.transform_geometric(img, op, matrix) for op, matrix in parsed]


# oversampling ----------------------------------------------------------------

def smote(minority: np.ndarray, k: int, n_new: int, seed: int) -> np.ndarray:
    """Synthetic rows interpolated toward one of each base row's k nearest neighbours."""
    rows = np.asarray(minority, dtype=np.float64)
    if rows.ndim != 2 or len(rows) < 2:
        raise ValueError("smote needs at least two minority rows")
    if not 1 <= k < len(rows):
        raise ValueError(f"k must lie in [1, {len(rows) - 1}], got {k}")
    if n_new == 0:
        return np.empty((0, rows.shape[1]))
    rng = np.random.default_rng(seed)
    d2 = ((rows[:, None, :] - rows[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    neighbours = np.argsort(d2, axis=1)[:, :k]

    out = np.empty((n_new, rows.shape[1]))
    for i in range(n_new):
        base = int(rng.integers(len(rows)))
        nb = int(neighbours[base, rng.integers(k)])
        lam = rng.uniform()
        out[i] = rows[base] + lam * (rows[nb] - rows[base])
    return out


def rose(rows: np.ndarray, bandwidth: float, n_new: int, seed: int) -> np.ndarray:
    """Smoothed bootstrap: resample rows and jitter by bandwidth * per-dim std."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or len(rows) == 0:
        raise ValueError("rose needs at least one row")
    if bandwidth < 0:
        raise ValueError("bandwidth must be >= 0")
    if n_new == 0:
        return np.empty((0, rows.shape[1]))
    rng = np.random.default_rng(seed)
    std = rows.std(axis=0, ddof=1) if len(rows) > 1 else np.zeros(rows.shape[1])
    picks = rng.integers(len(rows), size=n_new)
    noise = rng.normal(0.0, 1.0, size=(n_new, rows.shape[1])) * (bandwidth * std)
    return rows[picks] + noise


def balance_classes(
    rows: np.ndarray,
    labels: list,
    method: str = "smote",
    seed: int = 0,
    k: int = 5,
    min_count: int = 0,
) -> tuple[np.ndarray, list]:
    """Oversample every class up to max(largest class, min_count) rows.

    Call this on a training fold only.
    """
    rows = np.asarray(rows, dtype=np.float64)
    labels = list(labels)
    classes = sorted(set(labels))
    counts = {c: labels.count(c) for c in classes}
    target = max(max(counts.values()), min_count)

    out_rows = [rows]
    out_labels = list(labels)
    for ci, cls in enumerate(classes):
        need = target - counts[cls]
        if need <= 0:
            continue
        members = rows[[i for i, lab in enumerate(labels) if lab == cls]]
        if method == "smote" and len(members) >= 2:
            extra = smote(members, min(k, len(members) - 1), need, seed + ci)
        elif method == "rose" and len(members) >= 1:
            extra = rose(members, 0.1, need, seed + ci)
        else:  # single-row class: plain duplication
            extra = np.repeat(members, need, axis=0)[:need]
        out_rows.append(extra)
        out_labels.extend([cls] * need)
    return np.vstack(out_rows), out_labels


def stratified_patient_split(
    patient_ids: list, classes: list, test_fraction: float = 0.2, seed: int = 0
) -> tuple[list, list]:
    """Disjoint train/test patient id lists, stratified by class."""
    if len(patient_ids) != len(classes):
        raise ValueError("ids and classes must align")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    by_class: dict = {}
    for pid, cls in zip(patient_ids, classes):
        by_class.setdefault(cls, []).append(pid)
    train, test = [], []
    for cls in sorted(by_class):
        members = by_class[cls]
        order = rng.permutation(len(members))
        n_test = int(round(len(members) * test_fraction))
        if len(members) >= 2:
            n_test = min(max(n_test, 1), len(members) - 1)
        else:
            n_test = 0
        for j, idx in enumerate(order):
            (test if j < n_test else train).append(members[idx])
    return sorted(train), sorted(test)


# synthetic corpus -------------------------------------------------------------

IMAGE_SIZE = 64

# per-region base colour (Lab L and b*); a* carries the haemoglobin signal
_REGION_BASE = {"nailbed": (58.0, 15.0), "conjunctiva": (55.0, 12.0), "tongue": (52.0, 18.0)}
_SKIN_BASE = (72.0, 10.0, 16.0)
_SCLERA_BASE = (96.0, 0.0, 4.0)

A_STAR_INTERCEPT = 10.0
A_STAR_SLOPE = 1.5  # Lab a* units per g/dL


@dataclass
class SynthPatient:
    patient_id: str
    hb: float
    age_years: int
    sex: str
    pregnant: bool
    altitude_m: float
    images: dict = field(default_factory=dict)      # region -> uint8 RGB
    roi_masks: dict = field(default_factory=dict)   # region -> planted bool mask


def _ellipse_mask(h, w, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _render_region(rng, region: str, hb: float) -> tuple[np.ndarray, np.ndarray]:
    h = w = IMAGE_SIZE
    skin_l, skin_a, skin_b = _SKIN_BASE
    gradient = np.linspace(-2.0, 2.0, w)[None, :]
    L = skin_l + gradient + rng.normal(0, 0.8, (h, w))
    a = skin_a + rng.normal(0, 0.8, (h, w))
    b = skin_b + rng.normal(0, 0.8, (h, w))

    base_l, base_b = _REGION_BASE[region]
    cy = 40 if region == "conjunctiva" else 32
    roi = _ellipse_mask(h, w, cy + rng.integers(-2, 3), 32 + rng.integers(-2, 3),
                        12 + rng.integers(-1, 2), 20 + rng.integers(-2, 3))
    L[roi] = base_l + rng.normal(0, 0.6, int(roi.sum()))
    a[roi] = A_STAR_INTERCEPT + A_STAR_SLOPE * hb + rng.normal(0, 0.6, int(roi.sum()))
    b[roi] = base_b + rng.normal(0, 0.6, int(roi.sum()))

    if region == "conjunctiva":
        sclera = _ellipse_mask(h, w, 14, 32, 9, 20) & ~roi
        L[sclera] = _SCLERA_BASE[0] + rng.normal(0, 0.4, int(sclera.sum()))
        a[sclera] = _SCLERA_BASE[1] + rng.normal(0, 0.3, int(sclera.sum()))
        b[sclera] = _SCLERA_BASE[2] + rng.normal(0, 0.3, int(sclera.sum()))

    return imaging.lab_to_rgb(L, a, b), roi


def synth_corpus(n_patients: int, seed: int) -> list[SynthPatient]:
    """Seeded synthetic patients with a planted, recoverable haemoglobin signal."""
    if n_patients < 1:
        raise ValueError("need at least one patient")
    rng = np.random.default_rng(seed)
    patients = []
    for i in range(n_patients):
        hb = float(rng.uniform(5.0, 17.0))
        age = int(rng.integers(1, 81))
        sex = "female" if rng.random() < 0.5 else "male"
        pregnant = bool(sex == "female" and 15 <= age <= 49 and rng.random() < 0.3)
        altitude = float(np.round(rng.uniform(0.0, 2500.0), 1))
        patient = SynthPatient(
            patient_id=f"p{i:04d}", hb=round(hb, 2), age_years=age,
            sex=sex, pregnant=pregnant, altitude_m=altitude,
        )
        for region in REGIONS:
            img, roi = _render_region(rng, region, patient.hb)
            patient.images[region] = img
            patient.roi_masks[region] = roi
        patients.append(patient)
    return patients


def write_corpus(patients: list[SynthPatient], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "hb", "age_years", "sex", "pregnant", "altitude_m"])
        for p in patients:
            writer.writerow([p.patient_id, p.hb, p.age_years, p.sex,
                             int(p.pregnant), p.altitude_m])
            pdir = out / f"patient_{p.patient_id}"
            pdir.mkdir(exist_ok=True)
            for region in REGIONS:
                imgio.save_image(pdir / f"{region}.png", p.images[region])


def read_corpus(corpus_dir) -> list[SynthPatient]:
    root = Path(corpus_dir)
    labels = root / "labels.csv"
    if not labels.exists():
        raise FileNotFoundError(f"no labels.csv under {root}")
    patients = []
    with open(labels, newline="") as fh:
        for row in csv.DictReader(fh):
            p = SynthPatient(
                patient_id=row["patient_id"], hb=float(row["hb"]),
                age_years=int(row["age_years"]), sex=row["sex"],
                pregnant=bool(int(row["pregnant"])), altitude_m=float(row["altitude_m"]),
            )
            pdir = root / f"patient_{p.patient_id}"
            for region in REGIONS:
                path = pdir / f"{region}.png"
                if path.exists():
                    p.images[region] = imgio.load_image(path)
            patients.append(p)
    return patients
