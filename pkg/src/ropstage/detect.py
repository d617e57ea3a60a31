"""Detection backends and stage extraction.

A backend turns a materialized record into a list of :class:`Detection`.
External segmentation models plug in through the ``file`` backend, which
reads one ``<image-stem>.pred.json`` sidecar per image::

    {"image": "a.png",
     "detections": [{"stage": 2, "confidence": 0.93,
                     "mask": {"width": 299, "height": 299, "runs": [...]}}]}
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .annot import RleMask, StageLabel, check_same_shape, mask_area, rle_decode, rle_encode
from .dataset import SampleRecord, ground_truth_masks

DEFAULT_THRESHOLD = 0.8
SIDECAR_SUFFIX = ".pred.json"


class BackendKind(enum.Enum):
    ORACLE = "oracle"
    NULL = "null"
    FILE = "file"


class PredictionError(ValueError):
    def __init__(self, record_id: str, message: str):
        super().__init__(f"record {record_id}: {message}")
        self.record_id = record_id


@dataclass(frozen=True)
class Detection:
    mask: np.ndarray
    stage: StageLabel
    confidence: float

    def __post_init__(self):
        if self.stage is StageLabel.ROP_FREE:
            raise ValueError("a detection must carry a stage between 1 and 3")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def to_json(self) -> dict:
        return {"stage": self.stage.number, "confidence": self.confidence,
                "mask": rle_encode(self.mask).to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "Detection":
        return cls(rle_decode(RleMask.from_json(obj["mask"])), StageLabel.from_number(obj["stage"]),
                   float(obj["confidence"]))


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind = BackendKind.ORACLE
    confidence_threshold: float = DEFAULT_THRESHOLD
    file_dir: str | None = None

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", BackendKind(self.kind))
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError(f"confidence threshold {self.confidence_threshold} outside [0, 1]")
        if self.kind is BackendKind.FILE and not self.file_dir:
            raise ValueError("the file backend needs a prediction directory")


def sidecar_path(directory: str | Path, record: SampleRecord) -> Path:
    return Path(directory) / (Path(record.source_path).name.rsplit(".", 1)[0] + SIDECAR_SUFFIX)


def dumps_sidecar(record: SampleRecord, dets: list[Detection]) -> str:
    doc = {"image": Path(record.source_path).name, "detections": [d.to_json() for d in dets]}
    return json.dumps(doc, separators=(",", ":")) + "\n"


def load_sidecar(path: str | Path, record_id: str = "?") -> list[Detection]:
    path = Path(path)
    if not path.is_file():
        raise PredictionError(record_id, f"missing prediction file {path}")
    try:
        doc = json.loads(path.read_text())
        entries = doc["detections"] if isinstance(doc, dict) else doc
        return [Detection.from_json(e) for e in entries]
    except (ValueError, KeyError, TypeError) as exc:
        raise PredictionError(record_id, f"malformed prediction file {path}: {exc}") from exc


def predict(backend: BackendConfig, record: SampleRecord, img: np.ndarray,
            root: str | Path | None = None) -> list[Detection]:
    h, w = np.shape(img)
    if backend.kind is BackendKind.NULL:
        return []
    if backend.kind is BackendKind.ORACLE:
        masks = ground_truth_masks(record, w, h, root)
        return [Detection(m, p.stage, 1.0) for m, p in zip(masks, record.polygons)]
    dets = load_sidecar(sidecar_path(backend.file_dir, record), record.id)
    for d in dets:
        if d.mask.shape != (h, w):
            raise PredictionError(record.id, f"mask {d.mask.shape[::-1]} does not match image {w}x{h}")
    return [d for d in dets if d.confidence >= backend.confidence_threshold]


@dataclass(frozen=True)
class StagePrediction:
    stage: StageLabel
    per_stage_area: dict[StageLabel, int] = field(default_factory=dict)


def stage_union(dets: list[Detection], stage: StageLabel) -> np.ndarray | None:
    masks = [d.mask for d in dets if d.stage is stage]
    if not masks:
        return None
    return np.logical_or.reduce(masks)


def extract_stage(dets: list[Detection]) -> StagePrediction:
    """Union masks per stage and pick the stage covering the most pixels.

    Ties go to the lower stage; nothing detected means RopFree.
    """
    check_same_shape(*(d.mask for d in dets))
    areas = {}
    for stage in StageLabel.stages():
        union = stage_union(dets, stage)
        areas[stage] = 0 if union is None else mask_area(union)
    best = max(StageLabel.stages(), key=lambda s: (areas[s], -s.number))
    return StagePrediction(best if areas[best] > 0 else StageLabel.ROP_FREE, areas)
