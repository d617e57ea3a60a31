"""Evaluation: IoU matching, precision-recall curves, AP, confusion matrices."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .annot import StageLabel, check_same_shape
from .detect import Detection

IOU_THRESHOLD = 0.5


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union; two empty masks score 0."""
    check_same_shape(a, b)
    union = np.count_nonzero(np.logical_or(a, b))
    if union == 0:
        return 0.0
    return np.count_nonzero(np.logical_and(a, b)) / union


def rank(dets: list[Detection]) -> list[Detection]:
    # sorted() is stable, so equal confidences keep their input order
    return sorted(dets, key=lambda d: -d.confidence)


def match_detections(dets: list[Detection], gts: list[np.ndarray],
                     iou_threshold: float = IOU_THRESHOLD) -> list[tuple[Detection, bool]]:
    """Greedy one-to-one matching in descending confidence order.

    Each detection takes the still-unmatched ground truth with the highest
    IoU and is a true positive only if that IoU is strictly above the
    threshold.  A ground truth is consumed by its first match.
    """
    check_same_shape(*(d.mask for d in dets), *gts)
    used = [False] * len(gts)
    out = []
    for det in rank(dets):
        best, best_iou = -1, -1.0
        for j, gt in enumerate(gts):
            if used[j]:
                continue
            value = iou(det.mask, gt)
            if value > best_iou:
                best, best_iou = j, value
        hit = best >= 0 and best_iou > iou_threshold
        if hit:
            used[best] = True
        out.append((det, hit))
    return out


@dataclass(frozen=True)
class PrPoint:
    precision: float
    recall: float
    confidence: float


@dataclass(frozen=True)
class PrCurve:
    points: tuple[PrPoint, ...]
    num_ground_truth: int


def pr_curve(matched: list[tuple[Detection, bool]], num_gt: int) -> PrCurve:
    """Cumulative precision/recall after each detection, best confidence first."""
    if num_gt < 0:
        raise ValueError("num_gt must be non-negative")
    if num_gt == 0 and matched:
        raise ValueError("recall is undefined with no ground truth")
    ordered = sorted(matched, key=lambda m: -m[0].confidence)
    points, tp = [], 0
    for k, (det, hit) in enumerate(ordered, start=1):
        tp += bool(hit)
        points.append(PrPoint(tp / k, tp / num_gt, det.confidence))
    return PrCurve(tuple(points), num_gt)


def average_precision(curve: PrCurve, method: str = "envelope") -> float:
    """Area under the precision-recall curve.

    ``envelope`` (default) replaces each precision by the best precision at
    equal or higher recall and sums rectangles over recall increments.
    ``trapezoid`` integrates the raw curve, starting from recall 0 at the
    first point's precision.
    """
    if not curve.points:
        return 0.0
    p = np.array([pt.precision for pt in curve.points])
    r = np.array([pt.recall for pt in curve.points])
    dr = np.diff(np.concatenate([[0.0], r]))
    if method == "envelope":
        env = np.maximum.accumulate(p[::-1])[::-1]
        return float(np.sum(env * dr))
    if method == "trapezoid":
        prev = np.concatenate([[p[0]], p[:-1]])
        return float(np.sum(dr * (p + prev) / 2))
    raise ValueError(f"unknown AP method {method!r}")


# -- classification ---------------------------------------------------------

def _label(value) -> StageLabel:
    if isinstance(value, StageLabel):
        return value
    text = str(value).strip()
    for s in StageLabel:
        if text.lower() in (s.value.lower(), s.name.lower()):
            return s
    if text.lower() in ("rop-free", "0"):
        return StageLabel.ROP_FREE
    return StageLabel.from_number(int(text))


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[i][j]``: images of true class ``rows[i]`` predicted as ``columns[j]``."""

    rows: tuple[StageLabel, ...]
    columns: tuple[StageLabel, ...]
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (len(self.rows), len(self.columns)):
            raise ValueError(f"counts shape {counts.shape} does not fit {len(self.rows)}x{len(self.columns)} labels")
        if (counts < 0).any():
            raise ValueError("confusion counts must be non-negative")
        if StageLabel.ROP_FREE in self.rows:
            raise ValueError("RopFree cannot be a true label")
        object.__setattr__(self, "counts", counts)

    def count(self, true: StageLabel, predicted: StageLabel) -> int:
        if predicted not in self.columns:
            return 0
        return int(self.counts[self.rows.index(true), self.columns.index(predicted)])

    def to_json(self) -> dict:
        return {"rows": [s.value for s in self.rows], "columns": [s.value for s in self.columns],
                "counts": self.counts.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "ConfusionMatrix":
        return cls(tuple(map(_label, obj["rows"])), tuple(map(_label, obj["columns"])), obj["counts"])


def confusion_matrix(pairs, labels: tuple[StageLabel, ...] | None = None) -> ConfusionMatrix:
    """Tally ``(true, predicted)`` pairs.

    Rows are the stages seen (or ``labels``); a leading RopFree column is
    added only when some prediction is RopFree.
    """
    pairs = [(_label(t), _label(p)) for t, p in pairs]
    if not pairs:
        raise ValueError("no (true, predicted) pairs to tally")
    if any(t is StageLabel.ROP_FREE for t, _ in pairs):
        raise ValueError("RopFree cannot be a true label")
    if labels is None:
        seen = {t for t, _ in pairs} | {p for _, p in pairs if p is not StageLabel.ROP_FREE}
        labels = tuple(s for s in StageLabel.stages() if s in seen)
    rows = tuple(labels)
    columns = ((StageLabel.ROP_FREE,) if any(p is StageLabel.ROP_FREE for _, p in pairs) else ()) + rows
    counts = np.zeros((len(rows), len(columns)), dtype=np.int64)
    for t, p in pairs:
        if t not in rows or p not in columns:
            raise ValueError(f"pair ({t.value}, {p.value}) outside labels {[s.value for s in rows]}")
        counts[rows.index(t), columns.index(p)] += 1
    return ConfusionMatrix(rows, columns, counts)


@dataclass(frozen=True)
class ClassStats:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    per_class: dict[StageLabel, ClassStats]
    accuracy: float
    matrix: ConfusionMatrix

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": {s.value: vars(c) for s, c in self.per_class.items()},
            "confusion_matrix": self.matrix.to_json(),
        }


def f1_score(precision: float, recall: float) -> float:
    total = precision + recall
    return 0.0 if total == 0 else 2 * precision * recall / total


def report(cm: ConfusionMatrix) -> MetricsReport:
    stats = {}
    for stage in cm.rows:
        hit = cm.count(stage, stage)
        predicted = int(cm.counts[:, cm.columns.index(stage)].sum()) if stage in cm.columns else 0
        actual = int(cm.counts[cm.rows.index(stage)].sum())
        precision = hit / predicted if predicted else 0.0
        recall = hit / actual if actual else 0.0
        stats[stage] = ClassStats(precision, recall, f1_score(precision, recall), actual)
    total = int(cm.counts.sum())
    correct = sum(cm.count(s, s) for s in cm.rows)
    return MetricsReport(stats, correct / total if total else 0.0, cm)


def round2(x: float) -> float:
    """Two-decimal rounding, half up."""
    return float(Decimal(repr(x)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def format_report(rep: MetricsReport, title: str = "") -> str:
    cm = rep.matrix
    lines = [title] if title else []
    lines.append(f"{'':10s}{'Precision':>10s}{'Recall':>10s}{'F1':>10s}{'Support':>9s}")
    for s, c in rep.per_class.items():
        lines.append(f"{s.value:10s}{c.precision:10.2f}{c.recall:10.2f}{c.f1:10.2f}{c.support:9d}")
    lines.append(f"{'Accuracy':10s}{rep.accuracy:10.2f}")
    lines.append("")
    lines.append("true \\ predicted " + "".join(f"{c.value:>9s}" for c in cm.columns))
    for i, r in enumerate(cm.rows):
        lines.append(f"{r.value:17s}" + "".join(f"{n:9d}" for n in cm.counts[i]))
    return "\n".join(lines) + "\n"


def pr_csv(curve: PrCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["confidence", "precision", "recall"])
    for pt in curve.points:
        w.writerow([repr(pt.confidence), repr(pt.precision), repr(pt.recall)])
    return buf.getvalue()


def read_pr_csv(text: str) -> list[PrPoint]:
    rows = csv.DictReader(io.StringIO(text))
    return [PrPoint(float(r["precision"]), float(r["recall"]), float(r["confidence"])) for r in rows]
