"""Dataset manifests, stratified splitting, augmentation and fused samples.

Randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence([seed, stream...])``.  Only raw 64-bit outputs are consumed
(``random_raw``), so draws do not depend on numpy's distribution code.
"""
from __future__ import annotations

import enum
import hashlib
import json
import logging
import struct
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .annot import AnnotatedPolygon, StageLabel, rasterize
from .enhance import ClaheParams, preprocess, standardize
from .imgcore import EdgeCrop, MAX_CROP_FRACTION, center_zoom, check_gray, crop_edges, read_png, resize_bilinear, zoom_window

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
DEFAULT_RATIOS = (6, 3, 1)
DEFAULT_SIZE = 299
MAX_ZOOM = 1.1

_STREAM_SPLIT = 1
_STREAM_AUGMENT = 2


class Split(enum.Enum):
    TRAIN = "train"
    TEST = "test"
    VALIDATION = "validation"


SPLIT_ORDER = (Split.TRAIN, Split.TEST, Split.VALIDATION)


class RecordIOError(OSError):
    def __init__(self, record_id: str, message: str):
        super().__init__(f"record {record_id}: {message}")
        self.record_id = record_id


class FusedFormatError(ValueError):
    pass


# -- random numbers ---------------------------------------------------------

class StreamRng:
    """PCG64 stream addressed by ``(seed, *stream)``."""

    def __init__(self, seed: int, *stream: int):
        self._bits = np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)]))

    def raw(self) -> int:
        return int(self._bits.random_raw())

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` by rejection (no modulo bias)."""
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.raw()
            if r < limit:
                return r % n

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (self.raw() >> 11) * 2.0**-53 * (hi - lo)

    def shuffle(self, items: list) -> list:
        items = list(items)
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items


def id_stream(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


# -- records and manifest ---------------------------------------------------

@dataclass
class SampleRecord:
    id: str
    source_path: str
    stage: StageLabel
    split: Split | None = None
    group_id: str = ""
    is_augmented: bool = False
    polygons: list[AnnotatedPolygon] = field(default_factory=list)
    width: int = 0
    height: int = 0
    crop: EdgeCrop | None = None
    zoom: float | None = None

    def __post_init__(self):
        if not self.group_id:
            self.group_id = self.id
        if self.stage is StageLabel.ROP_FREE:
            raise ValueError(f"record {self.id}: RopFree is not a ground-truth label")

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "source_path": self.source_path,
            "stage": self.stage.number,
            "split": self.split.value if self.split else None,
            "group_id": self.group_id,
            "is_augmented": self.is_augmented,
            "width": self.width,
            "height": self.height,
            "polygons": [p.to_json() for p in self.polygons],
        }
        if self.is_augmented:
            c = self.crop or EdgeCrop()
            out["crop"] = {"top": c.top, "bottom": c.bottom, "left": c.left, "right": c.right}
            out["zoom"] = 1.0 if self.zoom is None else self.zoom
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "SampleRecord":
        crop = EdgeCrop(**obj["crop"]) if obj.get("crop") else None
        return cls(
            id=obj["id"],
            source_path=obj["source_path"],
            stage=StageLabel.from_number(obj["stage"]),
            split=Split(obj["split"]) if obj.get("split") else None,
            group_id=obj.get("group_id", ""),
            is_augmented=bool(obj.get("is_augmented", False)),
            polygons=[AnnotatedPolygon.from_json(p) for p in obj.get("polygons", [])],
            width=int(obj.get("width", 0)),
            height=int(obj.get("height", 0)),
            crop=crop,
            zoom=obj.get("zoom"),
        )


@dataclass
class DatasetManifest:
    records: list[SampleRecord]
    seed: int
    created_by: str = f"ropstage {__version__}"
    params: dict = field(default_factory=dict)

    def validate(self) -> None:
        """Raise ``ValueError`` on duplicate ids or a group spanning splits."""
        seen: set[str] = set()
        group_split: dict[str, Split | None] = {}
        for r in self.records:
            if r.id in seen:
                raise ValueError(f"duplicate record id {r.id!r}")
            seen.add(r.id)
            if group_split.setdefault(r.group_id, r.split) != r.split:
                raise ValueError(f"group {r.group_id!r} spans several splits")

    def counts(self) -> dict[StageLabel, dict[Split, int]]:
        table = {s: {sp: 0 for sp in SPLIT_ORDER} for s in StageLabel.stages()}
        for r in self.records:
            if r.split is not None:
                table[r.stage][r.split] += 1
        return table

    def by_split(self, split: Split) -> list[SampleRecord]:
        return [r for r in self.records if r.split is split]

    def get(self, record_id: str) -> SampleRecord:
        for r in self.records:
            if r.id == record_id:
                return r
        raise KeyError(record_id)

    @property
    def clahe_params(self) -> ClaheParams:
        c = self.params.get("clahe", {})
        return ClaheParams(**c) if c else ClaheParams()

    @property
    def output_size(self) -> int:
        return int(self.params.get("output_size", DEFAULT_SIZE))

    def to_json(self) -> dict:
        return {
            "format": "ropstage-manifest",
            "version": MANIFEST_VERSION,
            "seed": self.seed,
            "created_by": self.created_by,
            "params": self.params,
            "records": [r.to_json() for r in self.records],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetManifest":
        if obj.get("format") != "ropstage-manifest":
            raise ValueError("not a ropstage manifest")
        if obj.get("version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {obj.get('version')!r}")
        m = cls(
            records=[SampleRecord.from_json(r) for r in obj["records"]],
            seed=int(obj["seed"]),
            created_by=obj.get("created_by", ""),
            params=obj.get("params", {}),
        )
        m.validate()
        return m

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        return cls.from_json(json.loads(Path(path).read_text()))


def counts_table(manifest: DatasetManifest) -> str:
    """Per-class, per-split counts laid out like a dataset summary table."""
    lines = [f"{'':8s} {'Train':>7s} {'Test':>7s} {'Valid':>7s}"]
    for stage, row in manifest.counts().items():
        lines.append(f"{stage.value:8s} " + " ".join(f"{row[s]:7d}" for s in SPLIT_ORDER))
    return "\n".join(lines)


# -- splitting and augmentation ---------------------------------------------

def apportion(n: int, ratios=DEFAULT_RATIOS) -> list[int]:
    """Highest-averages (D'Hondt) apportionment of ``n`` items.

    Ties go to the larger ratio, then to the earlier position.
    """
    if any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be positive, got {ratios}")
    weights = [Fraction(r) for r in ratios]
    seats = [0] * len(weights)
    for _ in range(n):
        best = max(range(len(weights)), key=lambda i: (weights[i] / (seats[i] + 1), weights[i], -i))
        seats[best] += 1
    return seats


def split(records: list[SampleRecord], ratios=DEFAULT_RATIOS, seed: int = 0,
          params: dict | None = None) -> DatasetManifest:
    """Stratified train/test/validation split, one apportionment per stage.

    Records sharing a ``group_id`` move together.
    """
    if not records:
        raise ValueError("cannot split an empty record list")
    if len(ratios) != 3:
        raise ValueError("expected train:test:validation ratios")
    out: list[SampleRecord] = []
    for stage in StageLabel.stages():
        groups: dict[str, list[SampleRecord]] = {}
        for r in sorted((r for r in records if r.stage is stage), key=lambda r: r.id):
            groups.setdefault(r.group_id, []).append(r)
        order = StreamRng(seed, _STREAM_SPLIT, stage.number).shuffle(sorted(groups))
        sizes = apportion(len(order), ratios)
        pos = 0
        for sp, size in zip(SPLIT_ORDER, sizes):
            for gid in order[pos : pos + size]:
                out.extend(replace(r, split=sp) for r in groups[gid])
            pos += size
    p = dict(params or {})
    p["ratios"] = list(ratios)
    manifest = DatasetManifest(out, seed=seed, params=p)
    manifest.validate()
    return manifest


def augment_class(manifest: DatasetManifest, stage: StageLabel = StageLabel.STAGE1,
                  factor: int = 5, seed: int | None = None) -> DatasetManifest:
    """Add ``factor - 1`` randomly cropped and zoomed copies of each Train
    record of ``stage``.  Test and Validation records are left alone."""
    if factor < 1:
        raise ValueError(f"augmentation factor must be >= 1, got {factor}")
    seed = manifest.seed if seed is None else seed
    out: list[SampleRecord] = []
    for r in manifest.records:
        out.append(r)
        if factor == 1 or r.is_augmented or r.stage is not stage or r.split is not Split.TRAIN:
            continue
        rng = StreamRng(seed, _STREAM_AUGMENT, id_stream(r.id))
        for k in range(1, factor):
            crop = EdgeCrop(*(rng.uniform(0.0, MAX_CROP_FRACTION) for _ in range(4)))
            zoom = rng.uniform(1.0, MAX_ZOOM)
            out.append(replace(r, id=f"{r.id}~aug{k}", group_id=r.group_id, is_augmented=True,
                               crop=crop, zoom=zoom))
    params = dict(manifest.params)
    if factor > 1:
        params["augment"] = {"stage": stage.number, "factor": factor, "seed": seed}
    result = DatasetManifest(out, seed=manifest.seed, created_by=manifest.created_by, params=params)
    result.validate()
    return result


def records_from_via(entries, images_dir: str | Path | None = None) -> list[SampleRecord]:
    """One record per annotated image; the label is the most severe stage drawn.

    Images without polygons carry no stage and are skipped.
    """
    records = []
    for filename, polygons in entries:
        if not polygons:
            log.warning("%s has no annotated regions; skipped", filename)
            continue
        stage = max((p.stage for p in polygons), key=lambda s: s.number)
        width = height = 0
        if images_dir is not None:
            path = Path(images_dir) / filename
            try:
                with Image.open(path) as im:
                    width, height = im.size
            except OSError as exc:
                raise RecordIOError(filename, f"cannot read {path}: {exc}") from exc
        records.append(SampleRecord(id=filename, source_path=filename, stage=stage,
                                    polygons=list(polygons), width=width, height=height))
    return records


# -- materialization --------------------------------------------------------

def resolve_source(record: SampleRecord, root: str | Path | None) -> Path:
    path = Path(record.source_path)
    if not path.is_absolute() and root is not None:
        path = Path(root) / path
    return path


def materialize(record: SampleRecord, manifest: DatasetManifest, root: str | Path | None = None) -> np.ndarray:
    """Load and preprocess a record's source image at the manifest's output size."""
    path = resolve_source(record, root)
    try:
        img = read_png(path)
    except (OSError, ValueError) as exc:
        raise RecordIOError(record.id, f"cannot load {path}: {exc}") from exc
    img = preprocess(img, manifest.clahe_params)
    if record.is_augmented:
        img = crop_edges(img, record.crop or EdgeCrop())
        img = center_zoom(img, 1.0 if record.zoom is None else record.zoom)
    size = manifest.output_size
    return resize_bilinear(img, size, size)


def map_vertices(record: SampleRecord, vertices, src_w: int, src_h: int,
                 out_w: int, out_h: int) -> np.ndarray:
    """Carry source-image polygon coordinates through crop, zoom and resize."""
    v = np.array(vertices, dtype=np.float64)
    w, h = src_w, src_h
    if record.is_augmented:
        top, bottom, left, right = (record.crop or EdgeCrop()).pixels(w, h)
        v -= (left, top)
        w, h = w - left - right, h - top - bottom
        zl, zt, cw, ch = zoom_window(w, h, 1.0 if record.zoom is None else record.zoom)
        v = (v - (zl, zt)) * (w / cw, h / ch)
    return v * (out_w / w, out_h / h)


def ground_truth_masks(record: SampleRecord, out_w: int, out_h: int,
                       root: str | Path | None = None) -> list[np.ndarray]:
    """Rasterized annotation polygons in materialized-image coordinates."""
    src_w, src_h = record.width, record.height
    if not (src_w and src_h):
        path = resolve_source(record, root)
        try:
            with Image.open(path) as im:
                src_w, src_h = im.size
        except OSError as exc:
            raise RecordIOError(record.id, f"cannot read {path}: {exc}") from exc
    masks = []
    for poly in record.polygons:
        mapped = map_vertices(record, poly.vertices, src_w, src_h, out_w, out_h)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            masks.append(rasterize(AnnotatedPolygon(tuple(map(tuple, mapped)), poly.stage), out_w, out_h))
    return masks


# -- fused samples ----------------------------------------------------------

FUSED_MAGIC = b"ROPF"
FUSED_VERSION = 1
_HEADER = struct.Struct("<4sHIIB")
_MAX_DIM = 1 << 16


@dataclass(eq=False)
class FusedSample:
    """Standardized image (channel0) stacked with a 0/1 mask (channel1)."""

    width: int
    height: int
    channel0: np.ndarray
    channel1: np.ndarray

    def __post_init__(self):
        self.channel0 = np.asarray(self.channel0, dtype=np.float32)
        self.channel1 = np.asarray(self.channel1, dtype=np.float32)
        for ch in (self.channel0, self.channel1):
            if ch.shape != (self.height, self.width):
                raise ValueError(f"channel shape {ch.shape} != {(self.height, self.width)}")

    def same_as(self, other: "FusedSample") -> bool:
        """Bit-exact equality of dimensions and both channels."""
        return (
            (self.width, self.height) == (other.width, other.height)
            and self.channel0.tobytes() == other.channel0.tobytes()
            and self.channel1.tobytes() == other.channel1.tobytes()
        )


def fuse(img: np.ndarray, mask: np.ndarray) -> FusedSample:
    img = check_gray(img)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape:
        raise ValueError(f"mask shape {mask.shape} does not match image shape {img.shape}")
    h, w = img.shape
    return FusedSample(w, h, standardize(img), mask)


def fused_bytes(sample: FusedSample) -> bytes:
    header = _HEADER.pack(FUSED_MAGIC, FUSED_VERSION, sample.width, sample.height, 2)
    body = b"".join(np.ascontiguousarray(c, dtype="<f4").tobytes() for c in (sample.channel0, sample.channel1))
    return header + body


def write_fused(sample: FusedSample, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(fused_bytes(sample))


def parse_fused(data: bytes) -> FusedSample:
    if len(data) < _HEADER.size:
        raise FusedFormatError(f"truncated header: {len(data)} bytes")
    magic, version, width, height, channels = _HEADER.unpack_from(data)
    if magic != FUSED_MAGIC:
        raise FusedFormatError(f"bad magic {magic!r}")
    if version != FUSED_VERSION:
        raise FusedFormatError(f"unsupported version {version}")
    if not (0 < width <= _MAX_DIM and 0 < height <= _MAX_DIM):
        raise FusedFormatError(f"dimensions {width}x{height} out of range")
    if channels != 2:
        raise FusedFormatError(f"expected 2 channels, got {channels}")
    plane = width * height * 4
    expected = _HEADER.size + channels * plane
    if len(data) != expected:
        kind = "truncated" if len(data) < expected else "oversized"
        raise FusedFormatError(f"{kind} body: {len(data)} bytes, expected {expected}")
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(channels, height, width)
    return FusedSample(width, height, body[0].astype(np.float32), body[1].astype(np.float32))


def read_fused(path: str | Path) -> FusedSample:
    return parse_fused(Path(path).read_bytes())
