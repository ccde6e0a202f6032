"""ROI location: SLIC superpixels plus colour-profile cluster selection.

Superpixels are grown in the joint (Lab, xy) space with the usual distance
D = sqrt(d_lab^2 + (d_xy / S)^2 * m^2); the monotonicity bookkeeping tracks
the equivalent squared objective, whose argmin is identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import ensure_plane

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class ColorProfile:
    """Expected ROI colour: a Lab target with a match radius and a floor on area."""

    target: tuple[float, float, float]
    max_distance: float
    min_area_fraction: float

    def __post_init__(self):
        t = np.asarray(self.target, dtype=float)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValueError("target must be a finite Lab triple")
        if not 0.0 <= t[0] <= 100.0:
            raise ValueError("target L must lie in [0, 100]")
        if not self.max_distance > 0:
            raise ValueError("max_distance must be > 0")
        if not 0.0 < self.min_area_fraction <= 1.0:
            raise ValueError("min_area_fraction must lie in (0, 1]")


@dataclass
class RoiSelection:
    mask: np.ndarray
    labels: list[int]
    confident: bool


def _seed_positions(extent: int, step: float) -> np.ndarray:
    pos = np.arange(step / 2.0, extent, step)
    if len(pos) == 0:
        pos = np.array([extent / 2.0])
    return pos.astype(int)


def _gradient_map(L, a, b):
    g = np.zeros_like(L)
    for plane in (L, a, b):
        dx = np.empty_like(plane)
        dx[:, 1:-1] = plane[:, 2:] - plane[:, :-2]
        dx[:, 0] = plane[:, 1] - plane[:, 0]
        dx[:, -1] = plane[:, -1] - plane[:, -2]
        dy = np.empty_like(plane)
        dy[1:-1, :] = plane[2:, :] - plane[:-2, :]
        dy[0, :] = plane[1, :] - plane[0, :]
        dy[-1, :] = plane[-1, :] - plane[-2, :]
        g += dx ** 2 + dy ** 2
    return g


def slic(
    L: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    k: int,
    compactness: float = 10.0,
    iters: int = 10,
    return_history: bool = False,
):
    """Segment into roughly k superpixels; returns a compacted int label map.

    Orphan connected components smaller than (N/k)/4 pixels are merged into
    the largest adjacent cluster, then labels are renumbered consecutively.
    """
    L, a, b = ensure_plane(L), ensure_plane(a), ensure_plane(b)
    if L.shape != a.shape or L.shape != b.shape:
        raise ValueError("lab planes must share dimensions")
    if compactness <= 0:
        raise ValueError("compactness must be > 0")
    h, w = L.shape
    n = h * w
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")

    step = np.sqrt(n / k)
    ys = _seed_positions(h, step)
    xs = _seed_positions(w, step)
    seeds = np.array([(y, x) for y in ys for x in xs], dtype=float)

    if step >= 2.0:
        grad = _gradient_map(L, a, b)
        for i, (sy, sx) in enumerate(seeds):
            sy, sx = int(sy), int(sx)
            best = grad[sy, sx]
            for ny in range(max(sy - 1, 0), min(sy + 2, h)):
                for nx in range(max(sx - 1, 0), min(sx + 2, w)):
                    if grad[ny, nx] < best:
                        best = grad[ny, nx]
                        seeds[i] = (ny, nx)

    n_clusters = len(seeds)
    centers = np.empty((n_clusters, 5))
    centers[:, 0] = seeds[:, 0]
    centers[:, 1] = seeds[:, 1]
    iy, ix = seeds[:, 0].astype(int), seeds[:, 1].astype(int)
    centers[:, 2] = L[iy, ix]
    centers[:, 3] = a[iy, ix]
    centers[:, 4] = b[iy, ix]

    spatial_w = (compactness / step) ** 2
    margin = int(np.ceil(step))
    yy, xx = np.mgrid[0:h, 0:w].astype(float)

    def cluster_dist2(ci, y0, y1, x0, x1):
        cy, cx, cl, ca, cb = centers[ci]
        d_lab = (
            (L[y0:y1, x0:x1] - cl) ** 2
            + (a[y0:y1, x0:x1] - ca) ** 2
            + (b[y0:y1, x0:x1] - cb) ** 2
        )
        d_xy = (yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2
        return d_lab + d_xy * spatial_w

    labels = np.full((h, w), -1, dtype=np.int32)

    def assign():
        if labels.min() < 0:
            dist2 = np.full((h, w), np.inf)
        else:
            # keep the current cluster as a candidate so the objective
            # cannot increase when windows shift
            c = centers[labels]
            dist2 = (
                (L - c[..., 2]) ** 2
                + (a - c[..., 3]) ** 2
                + (b - c[..., 4]) ** 2
                + ((yy - c[..., 0]) ** 2 + (xx - c[..., 1]) ** 2) * spatial_w
            )
        for ci in range(n_clusters):
            cy, cx = centers[ci, 0], centers[ci, 1]
            y0, y1 = max(int(cy) - margin, 0), min(int(cy) + margin + 1, h)
            x0, x1 = max(int(cx) - margin, 0), min(int(cx) + margin + 1, w)
            d2 = cluster_dist2(ci, y0, y1, x0, x1)
            win = dist2[y0:y1, x0:x1]
            better = d2 < win
            labels[y0:y1, x0:x1][better] = ci
            win[better] = d2[better]
        # safety net for any pixel no window reached
        missing = labels < 0
        if missing.any():
            for py, px in zip(*np.nonzero(missing)):
                d = (
                    (L[py, px] - centers[:, 2]) ** 2
                    + (a[py, px] - centers[:, 3]) ** 2
                    + (b[py, px] - centers[:, 4]) ** 2
                    + ((py - centers[:, 0]) ** 2 + (px - centers[:, 1]) ** 2) * spatial_w
                )
                labels[py, px] = int(np.argmin(d))
                dist2[py, px] = d.min()
        return float(dist2.sum())

    def update_centers():
        flat = labels.ravel()
        counts = np.bincount(flat, minlength=n_clusters)
        occupied = counts > 0
        for col, plane in enumerate((yy, xx, L, a, b)):
            sums = np.bincount(flat, weights=plane.ravel(), minlength=n_clusters)
            centers[occupied, col] = sums[occupied] / counts[occupied]

    history = [assign()]
    for _ in range(iters):
        update_centers()
        history.append(assign())

    labels = _enforce_connectivity(labels, max(1, int(round(n / k / 4))))
    labels = _compact_labels(labels)
    if return_history:
        return labels, history
    return labels


def _enforce_connectivity(labels: np.ndarray, min_size: int) -> np.ndarray:
    labels = labels.copy()
    sizes = dict(zip(*np.unique(labels, return_counts=True)))
    for cluster in sorted(sizes):
        comps, n_comps = ndimage.label(labels == cluster, structure=_CROSS)
        if n_comps == 0:
            continue
        for comp_id in range(1, n_comps + 1):
            comp = comps == comp_id
            comp_size = int(comp.sum())
            if comp_size >= min_size:
                continue
            ring = ndimage.binary_dilation(comp, _CROSS) & ~comp
            neighbours = np.unique(labels[ring])
            neighbours = [nb for nb in neighbours if nb != cluster]
            if not neighbours:
                continue
            target = max(neighbours, key=lambda nb: (sizes.get(nb, 0), -nb))
            labels[comp] = target
            sizes[target] = sizes.get(target, 0) + comp_size
            sizes[cluster] -= comp_size
    return labels


def _compact_labels(labels: np.ndarray) -> np.ndarray:
    _, inverse = np.unique(labels, return_inverse=True)
    return inverse.reshape(labels.shape).astype(np.int32)


def cluster_means(labels: np.ndarray, L, a, b) -> np.ndarray:
    """Per-cluster mean Lab colour, shape (k, 3)."""
    flat = labels.ravel()
    k = int(flat.max()) + 1
    counts = np.bincount(flat, minlength=k).astype(float)
    means = np.empty((k, 3))
    for col, plane in enumerate((L, a, b)):
        means[:, col] = np.bincount(flat, weights=plane.ravel(), minlength=k) / counts
    return means


def select_roi(labels: np.ndarray, L, a, b, profile: ColorProfile) -> RoiSelection:
    """Union of clusters whose mean colour matches the profile.

    A selection whose area falls below the profile's floor (or an empty one)
    comes back as an empty mask flagged not-confident rather than an error.
    """
    L, a, b = ensure_plane(L), ensure_plane(a), ensure_plane(b)
    if labels.shape != L.shape:
        raise ValueError("label map dimensions do not match planes")
    means = cluster_means(labels, L, a, b)
    dist = np.linalg.norm(means - np.asarray(profile.target), axis=1)
    chosen = np.nonzero(dist <= profile.max_distance)[0]
    mask = np.isin(labels, chosen)
    area = int(mask.sum())
    if area < profile.min_area_fraction * labels.size:
        return RoiSelection(np.zeros_like(mask), [], confident=False)
    return RoiSelection(mask, [int(c) for c in chosen], confident=True)
