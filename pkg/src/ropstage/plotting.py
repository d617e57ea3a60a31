"""Report figures written straight to files (Agg backend, no display)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import ConfusionMatrix, PrCurve, PrPoint  # noqa: E402

# fixed metadata keeps PNG output byte-identical between runs
_PNG_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_pr_curve(points: PrCurve | list[PrPoint], path: str | Path, ap: float | None = None,
                  title: str = "Precision-recall") -> Path:
    pts = points.points if isinstance(points, PrCurve) else points
    fig, ax = plt.subplots(figsize=(5, 4))
    if pts:
        r = np.array([p.recall for p in pts])
        p = np.array([p.precision for p in pts])
        env = np.maximum.accumulate(p[::-1])[::-1]
        ax.plot(r, p, "o-", ms=3, lw=1, label="raw")
        ax.step(np.concatenate([[0.0], r]), np.concatenate([[env[0]], env]), where="pre", lw=1.5,
                label="envelope")
        ax.legend(loc="lower left")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    ax.set_title(title if ap is None else f"{title} (AP = {ap:.4f})")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_confusion(cm: ConfusionMatrix, path: str | Path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(1.3 * len(cm.columns) + 1.5, 1.2 * len(cm.rows) + 1.2))
    ax.imshow(cm.counts, cmap="Blues")
    ax.set_xticks(range(len(cm.columns)), [c.value for c in cm.columns])
    ax.set_yticks(range(len(cm.rows)), [r.value for r in cm.rows])
    ax.set_xlabel("Predicted")
    ax.set_ylabel("True")
    peak = cm.counts.max() if cm.counts.size else 0
    for i in range(len(cm.rows)):
        for j in range(len(cm.columns)):
            n = cm.counts[i, j]
            ax.text(j, i, str(n), ha="center", va="center", color="white" if n > peak / 2 else "black")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def overlay(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """RGB view of a fused sample: image in red and green, mask in blue."""
    img = np.asarray(img, dtype=np.uint8)
    blue = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    return np.stack([img, img, blue], axis=-1)
