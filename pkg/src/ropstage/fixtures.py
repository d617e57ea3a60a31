"""Synthetic fundus-like images with painted ridge curves and matching VIA JSON.

Used by the end-to-end tests; no real patient data is needed.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .annot import AnnotatedPolygon, StageLabel, rasterize, to_via
from .imgcore import write_png

# ridge half-width in pixels and brightness per stage
_STAGE_STYLE = {StageLabel.STAGE1: (1.5, 40), StageLabel.STAGE2: (3.0, 70), StageLabel.STAGE3: (5.0, 100)}


def ridge_polygon(cx: float, cy: float, radius: float, start: float, sweep: float,
                  half_width: float, n: int = 12) -> list[tuple[float, float]]:
    angles = np.linspace(start, start + sweep, n)
    outer = [(cx + (radius + half_width) * np.cos(a), cy + (radius + half_width) * np.sin(a)) for a in angles]
    inner = [(cx + (radius - half_width) * np.cos(a), cy + (radius - half_width) * np.sin(a)) for a in angles[::-1]]
    return [(round(float(x), 2), round(float(y), 2)) for x, y in outer + inner]


def paint_image(width: int, height: int, polygon_mask: np.ndarray, brightness: int,
                rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    cx, cy = width / 2, height / 2
    r = np.hypot((xx - cx) / (width / 2), (yy - cy) / (height / 2))
    base = np.clip(150 - 60 * r, 0, 255) * (r < 1.0)
    noise = rng.normal(0, 6, size=(height, width))
    gray = base + noise + brightness * polygon_mask
    red = np.clip(gray * 1.1 + 20, 0, 255)
    green = np.clip(gray * 0.7, 0, 255)
    blue = np.clip(gray * 0.4, 0, 255)
    return np.stack([red, green, blue], axis=-1).round().astype(np.uint8)


def make_synthetic_dataset(out_dir: str | Path, per_stage=(6, 6, 6), width: int = 96, height: int = 72,
                           seed: int = 0, stage_key: str = "stage") -> Path:
    """Write ``images/*.png`` and ``via.json`` under ``out_dir``; returns the JSON path."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    entries = []
    for stage, count in zip(StageLabel.stages(), per_stage):
        half_width, brightness = _STAGE_STYLE[stage]
        for k in range(count):
            radius = rng.uniform(0.25, 0.35) * min(width, height)
            start = rng.uniform(0, 2 * np.pi)
            verts = ridge_polygon(width / 2, height / 2, radius, start, rng.uniform(1.0, 2.0), half_width)
            poly = AnnotatedPolygon(tuple(verts), stage)
            name = f"s{stage.number}_{k:03d}.png"
            img = paint_image(width, height, rasterize(poly, width, height), brightness, rng)
            write_png(out_dir / "images" / name, img)
            entries.append((name, [poly]))
    via_path = out_dir / "via.json"
    via_path.write_text(json.dumps(to_via(entries, stage_key=stage_key), indent=1))
    return via_path
