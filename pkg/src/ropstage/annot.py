"""VGG Image Annotator polygons, rasterization and mask codecs.

Binary masks are ``bool`` numpy arrays of shape ``(height, width)``.
"""
from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass

import numpy as np


class StageLabel(enum.Enum):
    STAGE1 = "Stage1"
    STAGE2 = "Stage2"
    STAGE3 = "Stage3"
    ROP_FREE = "RopFree"

    @property
    def number(self) -> int:
        """1-3 for the stages, 0 for RopFree."""
        return _STAGE_NUMBERS[self]

    @classmethod
    def from_number(cls, n: int) -> "StageLabel":
        try:
            return _NUMBER_STAGES[int(n)]
        except (KeyError, ValueError, TypeError):
            raise ValueError(f"stage number must be 1, 2 or 3, got {n!r}") from None

    @classmethod
    def stages(cls) -> tuple["StageLabel", ...]:
        return (cls.STAGE1, cls.STAGE2, cls.STAGE3)


_STAGE_NUMBERS = {StageLabel.STAGE1: 1, StageLabel.STAGE2: 2, StageLabel.STAGE3: 3, StageLabel.ROP_FREE: 0}
_NUMBER_STAGES = {1: StageLabel.STAGE1, 2: StageLabel.STAGE2, 3: StageLabel.STAGE3}


class ViaParseError(ValueError):
    """Malformed JSON; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ViaRegionError(ValueError):
    """A region that cannot be turned into a stage-labelled polygon."""

    def __init__(self, image: str, region_index: int | None, message: str):
        where = image if region_index is None else f"{image}, region {region_index}"
        super().__init__(f"{where}: {message}")
        self.image = image
        self.region_index = region_index


class ClampWarning(UserWarning):
    pass


class DegeneratePolygonWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AnnotatedPolygon:
    vertices: tuple[tuple[float, float], ...]
    stage: StageLabel

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple((float(x), float(y)) for x, y in self.vertices))
        if len(self.vertices) < 3:
            raise ValueError(f"polygon needs at least 3 vertices, got {len(self.vertices)}")
        if self.stage is StageLabel.ROP_FREE:
            raise ValueError("RopFree is not a valid annotation label")

    def to_json(self) -> dict:
        return {
            "stage": self.stage.number,
            "x": [x for x, _ in self.vertices],
            "y": [y for _, y in self.vertices],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AnnotatedPolygon":
        return cls(tuple(zip(obj["x"], obj["y"])), StageLabel.from_number(obj["stage"]))


def _parse_stage(value, image: str, index: int) -> StageLabel:
    if isinstance(value, bool):
        value = None
    text = str(value).strip() if value is not None else ""
    if text in ("1", "2", "3"):
        return StageLabel.from_number(int(text))
    raise ViaRegionError(image, index, f"stage value {value!r} is not one of '1', '2', '3'")


def _parse_region(region, image: str, index: int, stage_key: str) -> AnnotatedPolygon:
    if not isinstance(region, dict):
        raise ViaRegionError(image, index, "region is not an object")
    shape = region.get("shape_attributes") or {}
    name = shape.get("name")
    if name != "polygon":
        raise ViaRegionError(image, index, f"unsupported shape {name!r}")
    xs, ys = shape.get("all_points_x"), shape.get("all_points_y")
    if not isinstance(xs, list) or not isinstance(ys, list) or len(xs) != len(ys):
        raise ViaRegionError(image, index, "polygon coordinate arrays missing or of unequal length")
    if len(xs) < 3:
        raise ViaRegionError(image, index, f"polygon has {len(xs)} vertices, need at least 3")
    try:
        vertices = tuple((float(x), float(y)) for x, y in zip(xs, ys))
    except (TypeError, ValueError):
        raise ViaRegionError(image, index, "non-numeric polygon coordinate") from None
    attrs = region.get("region_attributes") or {}
    if stage_key not in attrs:
        raise ViaRegionError(image, index, f"missing region attribute {stage_key!r}")
    return AnnotatedPolygon(vertices, _parse_stage(attrs[stage_key], image, index))


def parse_via(json_text: str | bytes, stage_key: str = "stage") -> list[tuple[str, list[AnnotatedPolygon]]]:
    """Parse a VIA project or export document.

    Accepts both the bare image map of an export and a full project file
    (image map under ``_via_img_metadata``).  Regions may be a list (VIA 2)
    or an index-keyed object (VIA 1).
    """
    if isinstance(json_text, bytes):
        json_text = json_text.decode("utf-8")
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise ViaParseError(exc.msg, len(json_text[: exc.pos].encode("utf-8"))) from None
    if isinstance(doc, dict) and "_via_img_metadata" in doc:
        doc = doc["_via_img_metadata"]
    if not isinstance(doc, dict):
        raise ViaParseError("top-level value is not an image map", 0)

    entries = []
    for key, meta in doc.items():
        if not isinstance(meta, dict):
            raise ViaRegionError(str(key), None, "image entry is not an object")
        filename = meta.get("filename", key)
        regions = meta.get("regions") or []
        if isinstance(regions, dict):
            regions = [regions[k] for k in sorted(regions, key=lambda k: int(k) if str(k).isdigit() else k)]
        polygons = [_parse_region(r, filename, i, stage_key) for i, r in enumerate(regions)]
        entries.append((filename, polygons))
    return entries


def to_via(entries: list[tuple[str, list[AnnotatedPolygon]]], sizes: dict[str, int] | None = None,
           stage_key: str = "stage") -> dict:
    """Build a VIA export image map (inverse of :func:`parse_via`)."""
    out = {}
    for filename, polygons in entries:
        size = (sizes or {}).get(filename, -1)
        regions = [
            {
                "shape_attributes": {
                    "name": "polygon",
                    "all_points_x": [int(x) if float(x).is_integer() else x for x, _ in p.vertices],
                    "all_points_y": [int(y) if float(y).is_integer() else y for _, y in p.vertices],
                },
                "region_attributes": {stage_key: str(p.stage.number)},
            }
            for p in polygons
        ]
        out[f"{filename}{size}"] = {"filename": filename, "size": size, "regions": regions, "file_attributes": {}}
    return out


def is_degenerate(vertices) -> bool:
    """True when all vertices are collinear (the polygon encloses nothing)."""
    d = np.asarray(vertices, dtype=np.float64)
    d = d - d[0]
    cross = np.outer(d[:, 0], d[:, 1]) - np.outer(d[:, 1], d[:, 0])
    return not cross.any()


def clamp_vertices(vertices, width: int, height: int) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    clamped = np.column_stack([np.clip(v[:, 0], 0, width), np.clip(v[:, 1], 0, height)])
    if not np.array_equal(clamped, v):
        warnings.warn(f"polygon vertices clamped to the {width}x{height} image", ClampWarning, stacklevel=3)
    return clamped


def rasterize(poly: AnnotatedPolygon, width: int, height: int) -> np.ndarray:
    """Scanline even-odd fill sampled at pixel centres.

    A pixel is set when ``(x + 0.5, y + 0.5)`` lies inside the polygon.
    Edges are half-open in y, and a centre exactly on a crossing counts as
    inside on the left edge and outside on the right edge.
    """
    if width < 1 or height < 1:
        raise ValueError(f"mask size must be positive, got {width}x{height}")
    verts = clamp_vertices(poly.vertices, width, height)
    mask = np.zeros((height, width), dtype=bool)
    if is_degenerate(verts):
        warnings.warn("degenerate polygon has zero area; mask is empty", DegeneratePolygonWarning, stacklevel=2)
        return mask

    x0, y0 = verts[:, 0], verts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    yc = np.arange(height, dtype=np.float64)[:, None] + 0.5
    crosses = ((y0 <= yc) & (yc < y1)) | ((y1 <= yc) & (yc < y0))
    dy = np.where(y1 == y0, 1.0, y1 - y0)
    xi = x0 + (yc - y0) * (x1 - x0) / dy

    # each crossing flips the inside state for every centre at or right of it
    rows, edges = np.nonzero(crosses)
    start = np.ceil(xi[rows, edges] - 0.5).astype(np.intp)
    start = np.clip(start, 0, width)
    toggles = np.zeros((height, width + 1), dtype=np.int32)
    np.add.at(toggles, (rows, start), 1)
    mask[:] = (np.cumsum(toggles, axis=1)[:, :width] % 2).astype(bool)
    return mask


def check_same_shape(*masks: np.ndarray) -> None:
    shapes = {np.shape(m) for m in masks}
    if len(shapes) > 1:
        raise ValueError(f"mask dimensions differ: {sorted(shapes)}")


def mask_union(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    check_same_shape(a, b)
    return np.logical_or(a, b)


def mask_area(m: np.ndarray) -> int:
    return int(np.count_nonzero(m))


@dataclass(frozen=True)
class RleMask:
    """Row-major run lengths alternating false/true, starting with false."""

    width: int
    height: int
    runs: tuple[int, ...]

    def to_json(self) -> dict:
        return {"width": self.width, "height": self.height, "runs": list(self.runs)}

    @classmethod
    def from_json(cls, obj: dict) -> "RleMask":
        return cls(int(obj["width"]), int(obj["height"]), tuple(int(r) for r in obj["runs"]))


def rle_encode(m: np.ndarray) -> RleMask:
    m = np.asarray(m, dtype=bool)
    height, width = m.shape
    flat = m.ravel()
    if flat.size == 0:
        return RleMask(width, height, ())
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return RleMask(width, height, tuple(int(r) for r in runs))


def rle_decode(r: RleMask) -> np.ndarray:
    runs = np.asarray(r.runs, dtype=np.int64)
    if (runs < 0).any():
        raise ValueError("run lengths must be non-negative")
    if int(runs.sum()) != r.width * r.height:
        raise ValueError(f"runs sum to {int(runs.sum())}, expected {r.width * r.height}")
    values = np.arange(len(runs)) % 2 == 1
    return np.repeat(values, runs).reshape(r.height, r.width)
