"""Raster types, colour-space conversions and geometric transforms.

Images are ``(H, W, 3)`` uint8 RGB arrays; single channels are ``(H, W)``
float64 planes.  Conventions are fixed so every downstream number is
reproducible: CIELab uses sRGB primaries with the D65 2-degree white point,
YCbCr is full-range BT.601, HSV has H in [0, 360) and S, V in [0, 1].
"""

from __future__ import annotations

import numpy as np

COLOR_SPACES = ("RGB", "CIELab", "YCbCr", "HSV")

# sRGB <-> XYZ (D65) matrices
_RGB2XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ2RGB = np.linalg.inv(_RGB2XYZ)
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])

# full-range BT.601 RGB -> YCbCr
_RGB2YCBCR = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCBCR2RGB = np.linalg.inv(_RGB2YCBCR)


def ensure_rgb8(img: np.ndarray) -> np.ndarray:
    """Validate an RGB image array and return it as uint8."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got {img.dtype}")
    return img


def ensure_plane(plane: np.ndarray) -> np.ndarray:
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ValueError(f"expected (H, W) plane, got shape {plane.shape}")
    if not np.all(np.isfinite(plane)):
        raise ValueError("plane contains non-finite values")
    return plane


def _srgb_to_linear(c):
    # c in [0, 1]
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c):
    c = np.clip(c, 0.0, 1.0)
    return np.where(c <= 0.0031308, c * 12.92, 1.055 * c ** (1 / 2.4) - 0.055)


def _lab_f(t):
    eps = (6.0 / 29.0) ** 3
    return np.where(t > eps, np.cbrt(t), t / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)


def _lab_f_inv(ft):
    delta = 6.0 / 29.0
    return np.where(ft > delta, ft ** 3, 3 * delta ** 2 * (ft - 4.0 / 29.0))


def rgb_to_lab(img: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    img = ensure_rgb8(img)
    rgb = _srgb_to_linear(img.astype(np.float64) / 255.0)
    xyz = rgb @ _RGB2XYZ.T
    f = _lab_f(xyz / _WHITE_D65)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return L, a, b


def lab_to_rgb(L: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    L, a, b = ensure_plane(L), ensure_plane(a), ensure_plane(b)
    _check_same_shape(L, a, b)
    fy = (L + 16.0) / 116.0
    fx = fy + a / 500.0
    fz = fy - b / 200.0
    xyz = np.stack([_lab_f_inv(fx), _lab_f_inv(fy), _lab_f_inv(fz)], axis=-1)
    xyz *= _WHITE_D65
    rgb = _linear_to_srgb(xyz @ _XYZ2RGB.T)
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


def rgb_to_ycbcr(img: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    img = ensure_rgb8(img)
    ycc = img.astype(np.float64) @ _RGB2YCBCR.T
    ycc[..., 1] += 128.0
    ycc[..., 2] += 128.0
    return ycc[..., 0], ycc[..., 1], ycc[..., 2]


def ycbcr_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    y, cb, cr = ensure_plane(y), ensure_plane(cb), ensure_plane(cr)
    _check_same_shape(y, cb, cr)
    ycc = np.stack([y, cb - 128.0, cr - 128.0], axis=-1)
    rgb = ycc @ _YCBCR2RGB.T
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


def rgb_to_hsv(img: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    img = ensure_rgb8(img)
    rgb = img.astype(np.float64) / 255.0
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]

    h = np.zeros_like(mx)
    nz = delta > 0
    rmax = nz & (mx == r)
    gmax = nz & ~rmax & (mx == g)
    bmax = nz & ~rmax & ~gmax
    h[rmax] = np.mod((g[rmax] - b[rmax]) / delta[rmax], 6.0)
    h[gmax] = (b[gmax] - r[gmax]) / delta[gmax] + 2.0
    h[bmax] = (r[bmax] - g[bmax]) / delta[bmax] + 4.0
    h *= 60.0

    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return h, s, mx


def hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, s, v = ensure_plane(h), ensure_plane(s), ensure_plane(v)
    _check_same_shape(h, s, v)
    h6 = np.mod(h, 360.0) / 60.0
    c = v * s
    x = c * (1.0 - np.abs(np.mod(h6, 2.0) - 1.0))
    m = v - c
    zeros = np.zeros_like(h6)
    sector = np.floor(h6).astype(int) % 6
    rs = np.choose(sector, [c, x, zeros, zeros, x, c])
    gs = np.choose(sector, [x, c, c, x, zeros, zeros])
    bs = np.choose(sector, [zeros, zeros, x, c, c, x])
    rgb = np.stack([rs + m, gs + m, bs + m], axis=-1)
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


def _check_same_shape(*planes):
    shapes = {p.shape for p in planes}
    if len(shapes) != 1:
        raise ValueError(f"plane dimension mismatch: {sorted(shapes)}")


def convert_color(img: np.ndarray, target: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split an RGB image into the three float planes of ``target`` space."""
    img = ensure_rgb8(img)
    if target == "RGB":
        f = img.astype(np.float64)
        return f[..., 0], f[..., 1], f[..., 2]
    if target == "CIELab":
        return rgb_to_lab(img)
    if target == "YCbCr":
        return rgb_to_ycbcr(img)
    if target == "HSV":
        return rgb_to_hsv(img)
    raise ValueError(f"unknown colour space {target!r}")


def convert_back(planes: tuple[np.ndarray, np.ndarray, np.ndarray], source: str) -> np.ndarray:
    """Rebuild an RGB image from three planes produced by :func:`convert_color`."""
    p0, p1, p2 = planes
    if source == "RGB":
        p0, p1, p2 = ensure_plane(p0), ensure_plane(p1), ensure_plane(p2)
        _check_same_shape(p0, p1, p2)
        return np.clip(np.round(np.stack([p0, p1, p2], axis=-1)), 0, 255).astype(np.uint8)
    if source == "CIELab":
        return lab_to_rgb(p0, p1, p2)
    if source == "YCbCr":
        return ycbcr_to_rgb(p0, p1, p2)
    if source == "HSV":
        return hsv_to_rgb(p0, p1, p2)
    raise ValueError(f"unknown colour space {source!r}")


def flip_h(img: np.ndarray) -> np.ndarray:
    return ensure_rgb8(img)[:, ::-1].copy()


def flip_v(img: np.ndarray) -> np.ndarray:
    return ensure_rgb8(img)[::-1].copy()


def rot90(img: np.ndarray) -> np.ndarray:
    """Rotate 90 degrees counter-clockwise."""
    return np.rot90(ensure_rgb8(img), 1).copy()


def affine(img: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Warp by a 2x3 affine matrix mapping input (x, y) to output coordinates.

    Bilinear sampling with edge clamp; the output raster has the input's size.
    """
    img = ensure_rgb8(img)
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (2, 3):
        raise ValueError(f"affine matrix must be 2x3, got {m.shape}")
    lin = m[:, :2]
    det = np.linalg.det(lin)
    if abs(det) < 1e-12:
        raise ValueError("affine matrix is singular")
    inv = np.linalg.inv(lin)

    h, w = img.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    # invert: source = inv @ (dst - t)
    dx = xs - m[0, 2]
    dy = ys - m[1, 2]
    sx = inv[0, 0] * dx + inv[0, 1] * dy
    sy = inv[1, 0] * dx + inv[1, 1] * dy

    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]

    f = img.astype(np.float64)
    top = f[y0, x0] * (1 - fx) + f[y0, x1] * fx
    bot = f[y1, x0] * (1 - fx) + f[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def transform_geometric(img: np.ndarray, op: str, matrix: np.ndarray | None = None) -> np.ndarray:
    """Apply one geometric op: ``flip_h``, ``flip_v``, ``rot90`` or ``affine``."""
    if op == "flip_h":
        return flip_h(img)
    if op == "flip_v":
        return flip_v(img)
    if op == "rot90":
        return rot90(img)
    if op == "affine":
        if matrix is None:
            raise ValueError("affine op requires a 2x3 matrix")
        return affine(img, matrix)
    raise ValueError(f"unknown geometric op {op!r}")
