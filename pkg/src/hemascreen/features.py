"""ROI colour statistics: the fixed 28-slot feature vector.

Slots 0-23 are mean/std pairs for the 12 channels of RGB, CIELab, YCbCr and
HSV (hue handled circularly); slot 24 is mean(R) - mean(G), slot 25 the mean
erythema index log10((R+1)/(G+1)), slot 26 an altitude term in km and slot 27
the age in years / 100.  Metadata slots default to 0 when unknown so the
vector length never changes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import imaging

REGIONS = ("nailbed", "conjunctiva", "tongue")

FEATURE_NAMES = tuple(
    f"{ch}_{stat}"
    for ch in ("r", "g", "b", "light", "a_star", "b_star", "y", "cb", "cr", "h", "s", "v")
    for stat in ("mean", "std")
) + ("rg_diff", "erythema", "altitude_km", "age_scaled")

FEATURE_LENGTH = len(FEATURE_NAMES)  # 28

FEATURE_VERSION = "fv1-" + hashlib.sha256(",".join(FEATURE_NAMES).encode()).hexdigest()[:8]


@dataclass
class FeatureVector:
    values: np.ndarray
    region: str
    valid: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (FEATURE_LENGTH,):
            raise ValueError(f"feature vector must have {FEATURE_LENGTH} slots")
        if self.region not in REGIONS:
            raise ValueError(f"unknown region {self.region!r}")
        if self.valid and not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")


def invalid_vector(region: str) -> FeatureVector:
    return FeatureVector(np.zeros(FEATURE_LENGTH), region, valid=False)


def _circular_stats(degrees: np.ndarray) -> tuple[float, float]:
    rad = np.deg2rad(degrees)
    c = np.cos(rad).mean()
    s = np.sin(rad).mean()
    mean = np.rad2deg(np.arctan2(s, c)) % 360.0
    r_bar = min(1.0, float(np.hypot(c, s)))
    std = np.rad2deg(np.sqrt(-2.0 * np.log(max(r_bar, 1e-12))))
    return float(mean), float(std)


def extract(
    img: np.ndarray,
    roi: np.ndarray,
    region: str,
    altitude_m: float | None = None,
    age_years: float | None = None,
) -> FeatureVector:
    """Colour statistics over the ROI pixels of one region image."""
    img = imaging.ensure_rgb8(img)
    roi = np.asarray(roi, dtype=bool)
    if roi.shape != img.shape[:2]:
        raise ValueError("ROI mask dimensions do not match image")
    if region not in REGIONS:
        raise ValueError(f"unknown region {region!r}")
    if not roi.any():
        return invalid_vector(region)

    values = []
    for space in ("RGB", "CIELab", "YCbCr", "HSV"):
        planes = imaging.convert_color(img, space)
        for idx, plane in enumerate(planes):
            sel = plane[roi]
            if space == "HSV" and idx == 0:
                mean, std = _circular_stats(sel)
            else:
                mean, std = float(sel.mean()), float(sel.std())
            values.extend([mean, std])

    r = img[..., 0][roi].astype(np.float64)
    g = img[..., 1][roi].astype(np.float64)
    values.append(float(r.mean() - g.mean()))
    values.append(float(np.log10((r + 1.0) / (g + 1.0)).mean()))
    values.append(0.0 if altitude_m is None else altitude_m / 1000.0)
    values.append(0.0 if age_years is None else age_years / 100.0)
    return FeatureVector(np.array(values), region)


@dataclass
class MlpHead:
    """Affine + ReLU stack ending in a scalar; used on bottleneck vectors."""

    layers: list = field(default_factory=list)  # list of (weights (out, in), bias (out,))

    def __post_init__(self):
        if not self.layers:
            raise ValueError("head needs at least one layer")
        w_last, _ = self.layers[-1]
        if w_last.shape[0] != 1:
            raise ValueError("final layer must produce a scalar")

    @property
    def input_size(self) -> int:
        return self.layers[0][0].shape[1]


def regress_bottleneck(vec: np.ndarray, head: MlpHead) -> float:
    """Run the bottleneck vector through the head; no output clamping."""
    x = np.asarray(vec, dtype=np.float64).ravel()
    if x.size != head.input_size:
        raise ValueError(f"head expects {head.input_size} inputs, got {x.size}")
    for i, (w, bias) in enumerate(head.layers):
        x = w @ x + bias
        if i < len(head.layers) - 1:
            x = np.maximum(x, 0.0)
    return float(x[0])
