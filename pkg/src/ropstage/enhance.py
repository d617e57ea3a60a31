"""Contrast enhancement: histograms, global equalization, CLAHE, standardization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgcore import check_gray, to_grayscale

NUM_BINS = 256


@dataclass(frozen=True)
class ClaheParams:
    """Tile grid and clip limit (in multiples of the uniform bin height)."""

    tiles_x: int = 8
    tiles_y: int = 8
    clip_limit: float = 2.0

    def __post_init__(self):
        if self.tiles_x < 1 or self.tiles_y < 1:
            raise ValueError(f"tile grid must be at least 1x1, got {self.tiles_x}x{self.tiles_y}")
        if not self.clip_limit > 0:
            raise ValueError(f"clip_limit must be positive, got {self.clip_limit}")


def histogram(img: np.ndarray) -> np.ndarray:
    img = check_gray(img)
    return np.bincount(img.ravel(), minlength=NUM_BINS).astype(np.int64)


def equalization_lut(hist: np.ndarray) -> np.ndarray | None:
    """Lookup table from the inclusive cumulative histogram.

    Maps ``v`` to ``round(255 * (C(v) - C_min) / (N - C_min))``.  Returns
    ``None`` when all mass sits in a single bin (``C_min == N``); callers
    treat that as the identity.
    """
    cdf = np.cumsum(np.asarray(hist, dtype=np.int64))
    total = int(cdf[-1])
    c_min = int(cdf[np.flatnonzero(cdf)[0]])
    if c_min == total:
        return None
    span = total - c_min
    # integer round-half-up of 255 * (cdf - c_min) / span
    lut = (2 * 255 * (cdf - c_min) + span) // (2 * span)
    return np.clip(lut, 0, 255).astype(np.uint8)


def equalize(img: np.ndarray) -> np.ndarray:
    img = check_gray(img)
    lut = equalization_lut(histogram(img))
    if lut is None:
        return img.copy()
    return lut[img]


def clip_histogram(hist: np.ndarray, clip_limit: float) -> np.ndarray:
    """Clip bins and spread the excess evenly over all bins.

    The absolute limit is ``clip_limit * pixels / 256`` truncated to an
    integer (at least 1).  Leftover counts go one per bin from bin 0 upward,
    so the total mass is unchanged.
    """
    hist = np.asarray(hist, dtype=np.int64)
    pixels = int(hist.sum())
    limit = max(1, int(clip_limit * pixels / NUM_BINS))
    excess = int(np.maximum(hist - limit, 0).sum())
    clipped = np.minimum(hist, limit)
    clipped += excess // NUM_BINS
    clipped[: excess % NUM_BINS] += 1
    return clipped


def tile_bounds(length: int, tiles: int) -> list[tuple[int, int]]:
    """Half-open tile spans; the last tile absorbs the remainder."""
    size = length // tiles
    bounds = [(i * size, (i + 1) * size) for i in range(tiles)]
    bounds[-1] = (bounds[-1][0], length)
    return bounds


def _blend_axis(length: int, bounds: list[tuple[int, int]]):
    """Neighbouring tile indices per pixel and the second tile's weight.

    Positions and tile centres are doubled so they stay integers; the weight
    is returned as ``(numerator, denominator)`` arrays.
    """
    centres2 = np.array([a + b for a, b in bounds], dtype=np.int64)
    pos2 = 2 * np.arange(length, dtype=np.int64) + 1
    j = np.searchsorted(centres2, pos2, side="right") - 1
    last = len(bounds) - 1
    first = np.clip(j, 0, last)
    second = np.clip(j + 1, 0, last)
    inner = (j >= 0) & (j < last)
    num = np.where(inner, pos2 - centres2[first], 0)
    den = np.where(inner, centres2[second] - centres2[first], 1)
    return first, second, num, den


def tile_luts(img: np.ndarray, params: ClaheParams) -> np.ndarray:
    """Per-tile lookup tables, shape ``(tiles_y, tiles_x, 256)``."""
    ys = tile_bounds(img.shape[0], params.tiles_y)
    xs = tile_bounds(img.shape[1], params.tiles_x)
    identity = np.arange(NUM_BINS, dtype=np.uint8)
    luts = np.empty((params.tiles_y, params.tiles_x, NUM_BINS), dtype=np.uint8)
    for ty, (y0, y1) in enumerate(ys):
        for tx, (x0, x1) in enumerate(xs):
            hist = histogram(img[y0:y1, x0:x1])
            if np.count_nonzero(hist) == 1:
                # single-intensity tile maps to itself, as in global equalization
                luts[ty, tx] = identity
                continue
            luts[ty, tx] = equalization_lut(clip_histogram(hist, params.clip_limit))
    return luts


def clahe(img: np.ndarray, params: ClaheParams = ClaheParams()) -> np.ndarray:
    img = check_gray(img)
    h, w = img.shape
    if params.tiles_x > w or params.tiles_y > h:
        raise ValueError(
            f"tile grid {params.tiles_x}x{params.tiles_y} is finer than the {w}x{h} image"
        )
    luts = tile_luts(img, params).astype(np.int64)
    ya, yb, ny, dy = _blend_axis(h, tile_bounds(h, params.tiles_y))
    xa, xb, nx, dx = _blend_axis(w, tile_bounds(w, params.tiles_x))
    ny, dy = ny[:, None], dy[:, None]
    ya, yb = ya[:, None], yb[:, None]
    top = luts[ya, xa, img] * (dx - nx) + luts[ya, xb, img] * nx
    bottom = luts[yb, xa, img] * (dx - nx) + luts[yb, xb, img] * nx
    num = top * (dy - ny) + bottom * ny
    den = dx * dy
    return np.clip((2 * num + den) // (2 * den), 0, 255).astype(np.uint8)


def standardize(img: np.ndarray) -> np.ndarray:
    """Zero-mean, unit (population) std float64 image; constant input gives zeros."""
    data = check_gray(img).astype(np.float64)
    std = data.std()
    if std == 0:
        return np.zeros_like(data)
    return (data - data.mean()) / std


def preprocess(img: np.ndarray, params: ClaheParams = ClaheParams()) -> np.ndarray:
    """Grayscale (if RGB), global equalization, then CLAHE."""
    img = np.asarray(img)
    if img.ndim == 3:
        img = to_grayscale(img)
    return clahe(equalize(img), params)
