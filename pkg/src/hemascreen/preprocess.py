"""Contrast normalization, thresholding, morphology and illumination correction.

The CLAHE variant here is fully pinned down so results are bit-reproducible:
integer histograms over floor-binned values, one clip-redistribution pass with
the residue going to bin 0, and the classic (cdf - cdf_min) equalization map
blended bilinearly between tile mappings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import ensure_plane, ensure_rgb8

_BINS = 256

STRUCTURING_ELEMENTS = {
    "cross3": np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool),
    "square3": np.ones((3, 3), dtype=bool),
}


class IlluminationReferenceError(ValueError):
    """Raised when no sclera reference pixels are available."""


@dataclass(frozen=True)
class ClaheConfig:
    tiles_x: int = 8
    tiles_y: int = 8
    clip_limit: float = 4.0  # multiple of the uniform bin height

    def __post_init__(self):
        if self.tiles_x < 1 or self.tiles_y < 1:
            raise ValueError("tile counts must be >= 1")
        if self.clip_limit < 1.0:
            raise ValueError("clip_limit below 1.0 would zero the histogram")


def _clipped_histogram(values: np.ndarray, clip_limit: float) -> np.ndarray:
    """256-bin histogram with counts above the clip ceiling redistributed."""
    hist = np.bincount(values.ravel(), minlength=_BINS).astype(np.int64)
    n = int(hist.sum())
    ceiling = max(1, int(clip_limit * n / _BINS))
    excess = int(np.maximum(hist - ceiling, 0).sum())
    hist = np.minimum(hist, ceiling)
    hist += excess // _BINS
    hist[0] += excess % _BINS
    return hist


def _tile_lut(values: np.ndarray, clip_limit: float) -> np.ndarray:
    if values.min() == values.max():
        # single-valued tile: degenerate histogram maps to itself
        return np.arange(_BINS, dtype=np.float64)
    cdf = np.cumsum(_clipped_histogram(values, clip_limit))
    n = int(cdf[-1])
    cdf_min = int(cdf[cdf > 0][0])
    lut = np.round((cdf - cdf_min) / (n - cdf_min) * (_BINS - 1))
    return np.clip(lut, 0, _BINS - 1).astype(np.float64)


def clahe(y: np.ndarray, cfg: ClaheConfig = ClaheConfig()) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization of a [0, 255] plane."""
    y = ensure_plane(y)
    h, w = y.shape
    if h < 2 * cfg.tiles_y or w < 2 * cfg.tiles_x:
        raise ValueError(
            f"tile grid {cfg.tiles_y}x{cfg.tiles_x} too large for {h}x{w} plane"
        )
    bins = np.clip(y, 0, 255).astype(np.int64)

    ye = [i * h // cfg.tiles_y for i in range(cfg.tiles_y + 1)]
    xe = [i * w // cfg.tiles_x for i in range(cfg.tiles_x + 1)]
    luts = np.empty((cfg.tiles_y, cfg.tiles_x, _BINS))
    for ty in range(cfg.tiles_y):
        for tx in range(cfg.tiles_x):
            tile = bins[ye[ty] : ye[ty + 1], xe[tx] : xe[tx + 1]]
            luts[ty, tx] = _tile_lut(tile, cfg.clip_limit)

    # bilinear blend between the four surrounding tile mappings
    cy = np.array([(ye[t] + ye[t + 1] - 1) / 2.0 for t in range(cfg.tiles_y)])
    cx = np.array([(xe[t] + xe[t + 1] - 1) / 2.0 for t in range(cfg.tiles_x)])
    ty0, wy = _blend_coords(np.arange(h), cy)
    tx0, wx = _blend_coords(np.arange(w), cx)
    ty1 = np.minimum(ty0 + 1, cfg.tiles_y - 1)
    tx1 = np.minimum(tx0 + 1, cfg.tiles_x - 1)

    r0, r1 = ty0[:, None], ty1[:, None]
    c0, c1 = tx0[None, :], tx1[None, :]
    wyc = wy[:, None]
    wxc = wx[None, :]
    out = (
        luts[r0, c0, bins] * (1 - wyc) * (1 - wxc)
        + luts[r0, c1, bins] * (1 - wyc) * wxc
        + luts[r1, c0, bins] * wyc * (1 - wxc)
        + luts[r1, c1, bins] * wyc * wxc
    )
    return out


def _blend_coords(pos: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lower tile index and blend weight for each pixel coordinate."""
    idx = np.searchsorted(centers, pos, side="right") - 1
    idx = np.clip(idx, 0, max(len(centers) - 2, 0))
    if len(centers) == 1:
        return np.zeros(len(pos), dtype=int), np.zeros(len(pos))
    span = centers[idx + 1] - centers[idx]
    weight = np.clip((pos - centers[idx]) / span, 0.0, 1.0)
    return idx, weight


def adaptive_threshold(plane: np.ndarray, window: int, offset: float) -> np.ndarray:
    """Foreground where a pixel exceeds its edge-clamped window mean by offset.

    Positive offsets make the mask more conservative; on a constant plane a
    positive offset yields all-background and a negative one all-foreground.
    """
    plane = ensure_plane(plane)
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    local_mean = ndimage.uniform_filter(plane, size=window, mode="nearest")
    return plane > local_mean + offset


def morph(mask: np.ndarray, op: str, se: str = "square3") -> np.ndarray:
    """Binary morphology with outside-the-raster treated as background."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    if se not in STRUCTURING_ELEMENTS:
        raise ValueError(f"unknown structuring element {se!r}")
    structure = STRUCTURING_ELEMENTS[se]

    # pad so composite ops are not cropped mid-way (keeps open/close idempotent)
    padded = np.pad(mask, 1, constant_values=False)
    if op == "erode":
        padded = ndimage.binary_erosion(padded, structure, border_value=0)
    elif op == "dilate":
        padded = ndimage.binary_dilation(padded, structure, border_value=0)
    elif op == "open":
        padded = ndimage.binary_erosion(padded, structure, border_value=0)
        padded = ndimage.binary_dilation(padded, structure, border_value=0)
    elif op == "close":
        padded = ndimage.binary_dilation(padded, structure, border_value=0)
        padded = ndimage.binary_erosion(padded, structure, border_value=0)
    else:
        raise ValueError(f"unknown morphology op {op!r}")
    return padded[1:-1, 1:-1]


def correct_illumination(
    img: np.ndarray, sclera: np.ndarray, target_white: float = 230.0
) -> np.ndarray:
    """Scale channels so the sclera's mean colour lands on target_white.

    Per-channel gains are clamped to [0.5, 2.0] so a pathological reference
    (disease, glare) cannot destroy the image.
    """
    img = ensure_rgb8(img)
    sclera = np.asarray(sclera, dtype=bool)
    if sclera.shape != img.shape[:2]:
        raise ValueError("sclera mask dimensions do not match image")
    if not sclera.any():
        raise IlluminationReferenceError("sclera mask is empty, no reference available")
    means = img[sclera].mean(axis=0)
    gains = np.clip(target_white / means, 0.5, 2.0)
    out = img.astype(np.float64) * gains
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def icm_energy(labels: np.ndarray, unary: np.ndarray, pairwise_weight: float) -> float:
    """Potts energy: unary negative log-likelihood plus pairwise disagreement."""
    p = np.clip(unary, 1e-6, 1.0 - 1e-6)
    data = np.where(labels, -np.log(p), -np.log(1.0 - p)).sum()
    horiz = (labels[:, 1:] != labels[:, :-1]).sum()
    vert = (labels[1:, :] != labels[:-1, :]).sum()
    return float(data + pairwise_weight * (horiz + vert))


def crf_refine(
    unary: np.ndarray,
    pairwise_weight: float,
    max_iters: int = 10,
    return_energies: bool = False,
):
    """Refine a foreground-probability map into a mask by iterated conditional modes.

    Raster-scan sweeps over a 4-neighbour Potts model until no pixel flips or
    ``max_iters`` sweeps have run.  Ties are broken toward background.
    """
    unary = ensure_plane(unary)
    if unary.min() < 0.0 or unary.max() > 1.0:
        raise ValueError("unary probabilities must lie in [0, 1]")
    if pairwise_weight < 0:
        raise ValueError("pairwise_weight must be >= 0")
    p = np.clip(unary, 1e-6, 1.0 - 1e-6)
    cost_fg = -np.log(p)
    cost_bg = -np.log(1.0 - p)

    labels = cost_fg < cost_bg  # tie toward background
    energies = [icm_energy(labels, unary, pairwise_weight)]
    h, w = labels.shape
    for _ in range(max_iters):
        flips = 0
        for yy in range(h):
            for xx in range(w):
                n_fg = 0
                n_total = 0
                for ny, nx in ((yy - 1, xx), (yy + 1, xx), (yy, xx - 1), (yy, xx + 1)):
                    if 0 <= ny < h and 0 <= nx < w:
                        n_total += 1
                        n_fg += labels[ny, nx]
                e_fg = cost_fg[yy, xx] + pairwise_weight * (n_total - n_fg)
                e_bg = cost_bg[yy, xx] + pairwise_weight * n_fg
                new = e_fg < e_bg
                if new != labels[yy, xx]:
                    labels[yy, xx] = new
                    flips += 1
        energies.append(icm_energy(labels, unary, pairwise_weight))
        if flips == 0:
            break
    if return_energies:
        return labels, energies
    return labels
