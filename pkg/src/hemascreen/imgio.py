"""PNG/JPEG decoding and encoding for the CLI and service boundaries.

The library core only ever sees decoded uint8 RGB arrays.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image, UnidentifiedImageError

from .imaging import ensure_rgb8


class ImageDecodeError(ValueError):
    pass


def decode_bytes(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageDecodeError(f"cannot decode image: {exc}") from exc


def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(ensure_rgb8(img)).save(buf, format="PNG")
    return buf.getvalue()


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageDecodeError(f"cannot decode {path}: {exc}") from exc


def save_image(path, img: np.ndarray) -> None:
    Image.fromarray(ensure_rgb8(img)).save(path)
