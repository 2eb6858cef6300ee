"""Grayscale image helpers: u8 conversion, grid tiling, PNG bytes."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image


def to_u8(img: np.ndarray) -> np.ndarray:
    """[0,1] floats to 8-bit grayscale."""
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def tile_grid(images, cols: int, sep: int = 2, sep_value: int = 255) -> np.ndarray:
    """Row-major tiling of equally sized images with separator strips."""
    imgs = [to_u8(im) if im.dtype != np.uint8 else im for im in images]
    if not imgs:
        raise ValueError("no images to tile")
    h, w = imgs[0].shape
    rows = -(-len(imgs) // cols)
    out = np.full((rows * h + (rows - 1) * sep,
                   cols * w + (cols - 1) * sep), sep_value, dtype=np.uint8)
    for idx, im in enumerate(imgs):
        r, c = divmod(idx, cols)
        out[r * (h + sep):r * (h + sep) + h,
            c * (w + sep):c * (w + sep) + w] = im
    return out


def png_bytes(arr: np.ndarray) -> bytes:
    """Deterministic 8-bit grayscale PNG encoding."""
    if arr.dtype != np.uint8:
        arr = to_u8(arr)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def write_png(arr: np.ndarray, path) -> None:
    with open(path, "wb") as f:
        f.write(png_bytes(arr))


def read_png(path) -> np.ndarray:
    """PNG back to [0,1] floats."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
