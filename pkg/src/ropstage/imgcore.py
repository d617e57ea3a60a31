"""Pixel rasters and geometry.

Images are plain numpy arrays: ``GrayImage`` is ``uint8`` with shape
``(height, width)`` and ``RgbImage`` is ``uint8`` with shape
``(height, width, 3)``.  Every quantization step rounds half up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

MAX_CROP_FRACTION = 0.05


def check_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"expected a 2-D uint8 image, got {img.dtype} with shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must have at least one pixel")
    return img


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Luminance ``0.3 R + 0.59 G + 0.11 B`` rounded half up.

    Evaluated in integer hundredths so the rounding is exact.
    """
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"expected an (H, W, 3) uint8 image, got {img.dtype} {img.shape}")
    rgb = img.astype(np.int32)
    hundredths = 30 * rgb[..., 0] + 59 * rgb[..., 1] + 11 * rgb[..., 2]
    return np.clip((hundredths + 50) // 100, 0, 255).astype(np.uint8)


def _source_coords(out_len: int, in_len: int):
    """Neighbour indices and integer weights for half-pixel-centre sampling.

    The source position of output sample ``i`` is
    ``((2i + 1) * in_len - out_len) / (2 * out_len)``; it is kept as an
    integer numerator over ``2 * out_len`` so interpolation is exact.
    """
    den = 2 * out_len
    num = (2 * np.arange(out_len, dtype=np.int64) + 1) * in_len - out_len
    num = np.clip(num, 0, (in_len - 1) * den)
    lo = num // den
    hi = np.minimum(lo + 1, in_len - 1)
    return lo, hi, num - lo * den, den


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize with half-pixel-centre mapping (align corners off).

    Evaluated in exact integer arithmetic, then rounded half up.
    """
    img = check_gray(img)
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    in_h, in_w = img.shape
    if (in_w, in_h) == (out_w, out_h):
        return img.copy()
    x0, x1, fx, dx = _source_coords(out_w, in_w)
    y0, y1, fy, dy = _source_coords(out_h, in_h)
    src = img.astype(np.int64)
    top = src[y0][:, x0] * (dx - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (dx - fx) + src[y1][:, x1] * fx
    num = top * (dy - fy)[:, None] + bottom * fy[:, None]
    den = dx * dy
    return np.clip((2 * num + den) // (2 * den), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class EdgeCrop:
    """Fractions of each dimension removed from the corresponding edge."""

    top: float = 0.0
    bottom: float = 0.0
    left: float = 0.0
    right: float = 0.0

    def __post_init__(self):
        for name in ("top", "bottom", "left", "right"):
            value = getattr(self, name)
            if not 0.0 <= value <= MAX_CROP_FRACTION:
                raise ValueError(f"crop fraction {name}={value} outside [0, {MAX_CROP_FRACTION}]")

    def pixels(self, width: int, height: int) -> tuple[int, int, int, int]:
        """(top, bottom, left, right) pixel counts for an image of this size."""
        return (
            math.floor(self.top * height),
            math.floor(self.bottom * height),
            math.floor(self.left * width),
            math.floor(self.right * width),
        )


def crop_edges(img: np.ndarray, crop: EdgeCrop) -> np.ndarray:
    img = check_gray(img)
    h, w = img.shape
    top, bottom, left, right = crop.pixels(w, h)
    if h - top - bottom < 1 or w - left - right < 1:
        raise ValueError(f"crop {crop} empties a {w}x{h} image")
    return img[top : h - bottom, left : w - right].copy()


def zoom_window(width: int, height: int, factor: float) -> tuple[int, int, int, int]:
    """Centred window ``(left, top, w, h)`` kept by a zoom of ``factor``."""
    if factor < 1.0:
        raise ValueError(f"zoom factor must be >= 1.0, got {factor}")
    cw = max(1, math.floor(width / factor))
    ch = max(1, math.floor(height / factor))
    return (width - cw) // 2, (height - ch) // 2, cw, ch


def center_zoom(img: np.ndarray, factor: float) -> np.ndarray:
    img = check_gray(img)
    h, w = img.shape
    left, top, cw, ch = zoom_window(w, h, factor)
    return resize_bilinear(img[top : top + ch, left : left + cw], w, h)


def read_png(path: str | Path) -> np.ndarray:
    """Load a PNG as gray (H, W) or RGB (H, W, 3) uint8; alpha is dropped."""
    with Image.open(path) as im:
        if im.format != "PNG":
            raise ValueError(f"{path}: not a PNG file")
        if im.mode in ("L", "1", "I;16", "I"):
            arr = np.asarray(im.convert("L"))
        else:
            arr = np.asarray(im.convert("RGB"))
    return np.ascontiguousarray(arr, dtype=np.uint8)


def read_gray(path: str | Path) -> np.ndarray:
    arr = read_png(path)
    return to_grayscale(arr) if arr.ndim == 3 else arr


def write_png(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img).save(path, format="PNG", optimize=False)
