"""
services/evaluation.py

One-pass evaluation of tracking results.

- Precision curve: fraction of frames whose center location error is <= t,
  for t = 0..50 px. The headline figure is the value at 20 px.
- Success curve: fraction of frames whose overlap (IoU) is >= t, for
  t = 0..1 in steps of 0.02. Its AUC is the mean of the curve values.
- Frame 1 (the initialization box) counts like every other frame.

Output layout written by `export(...)`:
    <out>/results/<sequence>.txt   one "x,y,w,h" line per frame
    <out>/curves.csv               sequence, curve, threshold, value
    <out>/summary.csv              sequence, frames, precision_20, auc, fps
    <out>/precision.png, success.png   (optional)
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ingest.sequences import BoundingBox, SequenceError, read_boxes, write_boxes

logger = logging.getLogger(__name__)

PRECISION_THRESHOLDS = np.arange(0, 51, dtype=float)
SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 51)
PRECISION_AT = 20
OVERALL = "overall"


class EvaluationError(ValueError):
    pass


@dataclass
class TrackResult:
    name: str
    boxes: List[BoundingBox]
    times: List[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def fps(self) -> float:
        total = float(sum(self.times))
        if not self.times or total <= 0:
            return float("nan")
        return len(self.times) / total


@dataclass(frozen=True)
class Curve:
    thresholds: np.ndarray
    values: np.ndarray

    def at(self, threshold: float) -> float:
        hits = np.flatnonzero(np.isclose(self.thresholds, threshold))
        if hits.size == 0:
            raise EvaluationError(f"threshold {threshold} is not on the curve grid")
        return float(self.values[hits[0]])

    @property
    def auc(self) -> float:
        return float(np.mean(self.values))


@dataclass(frozen=True)
class SequenceScore:
    name: str
    frames: int
    precision: Curve
    success: Curve
    fps: float

    @property
    def precision_20(self) -> float:
        return self.precision.at(PRECISION_AT)

    @property
    def auc(self) -> float:
        return self.success.auc


def cle(pred: BoundingBox, gt: BoundingBox) -> float:
    return math.hypot(pred.cx - gt.cx, pred.cy - gt.cy)


def iou(pred: BoundingBox, gt: BoundingBox) -> float:
    px, py, pw, ph = pred.to_corner()
    gx, gy, gw, gh = gt.to_corner()
    iw = max(0.0, min(px + pw, gx + gw) - max(px, gx))
    ih = max(0.0, min(py + ph, gy + gh) - max(py, gy))
    inter = iw * ih
    union = pw * ph + gw * gh - inter
    return inter / union if union > 0 else 0.0


def _check_lengths(preds: Sequence[BoundingBox], gts: Sequence[BoundingBox]) -> None:
    if len(preds) != len(gts):
        raise EvaluationError(f"{len(preds)} predictions against {len(gts)} ground-truth boxes")
    if not preds:
        raise EvaluationError("cannot evaluate an empty result")


def precision_curve(preds: Sequence[BoundingBox], gts: Sequence[BoundingBox],
                    thresholds: np.ndarray = PRECISION_THRESHOLDS) -> Curve:
    _check_lengths(preds, gts)
    errors = np.array([cle(p, g) for p, g in zip(preds, gts)])
    values = (errors[None, :] <= thresholds[:, None]).mean(axis=1)
    return Curve(thresholds=np.asarray(thresholds, dtype=float), values=values)


def success_curve(preds: Sequence[BoundingBox], gts: Sequence[BoundingBox],
                  thresholds: np.ndarray = SUCCESS_THRESHOLDS) -> Curve:
    _check_lengths(preds, gts)
    overlaps = np.array([iou(p, g) for p, g in zip(preds, gts)])
    values = (overlaps[None, :] >= thresholds[:, None]).mean(axis=1)
    return Curve(thresholds=np.asarray(thresholds, dtype=float), values=values)


def score(result: TrackResult, gts: Sequence[BoundingBox]) -> SequenceScore:
    return SequenceScore(
        name=result.name,
        frames=len(result),
        precision=precision_curve(result.boxes, gts),
        success=success_curve(result.boxes, gts),
        fps=result.fps,
    )


def evaluate(results: Sequence[TrackResult], gts: Dict[str, Sequence[BoundingBox]]) -> List[SequenceScore]:
    """
    Score every result against its ground truth, sorted by sequence name,
    followed by an ``overall`` entry pooling all frames.
    """
    if not results:
        raise EvaluationError("no tracking results to evaluate")
    scores, pooled_preds, pooled_gts, times = [], [], [], []
    for result in sorted(results, key=lambda r: r.name):
        if result.name not in gts:
            raise EvaluationError(f"no ground truth for sequence {result.name!r}")
        scores.append(score(result, gts[result.name]))
        pooled_preds.extend(result.boxes)
        pooled_gts.extend(gts[result.name])
        times.extend(result.times)
    pooled = TrackResult(name=OVERALL, boxes=pooled_preds, times=times)
    scores.append(score(pooled, pooled_gts))
    return scores


def result_path(out_dir: str, name: str) -> str:
    return os.path.join(out_dir, "results", f"{name}.txt")


def load_results(results_dir: str) -> List[TrackResult]:
    if not os.path.isdir(results_dir):
        raise EvaluationError(f"results directory {results_dir} does not exist")
    names = sorted(f for f in os.listdir(results_dir) if f.endswith(".txt"))
    if not names:
        raise EvaluationError(f"no result files in {results_dir}")
    return [TrackResult(name=os.path.splitext(n)[0], boxes=read_boxes(os.path.join(results_dir, n)))
            for n in names]


def load_ground_truth(gt_dir: str, names: Sequence[str]) -> Dict[str, List[BoundingBox]]:
    """Find ``<gt>/<name>/groundtruth_rect.txt`` or ``<gt>/<name>.txt`` for each name."""
    if not os.path.isdir(gt_dir):
        raise EvaluationError(f"ground-truth directory {gt_dir} does not exist")
    gts = {}
    for name in names:
        candidates = [os.path.join(gt_dir, name, "groundtruth_rect.txt"), os.path.join(gt_dir, f"{name}.txt")]
        found = next((c for c in candidates if os.path.isfile(c)), None)
        if found is None:
            raise EvaluationError(f"no ground truth for {name!r} under {gt_dir}")
        try:
            gts[name] = read_boxes(found)
        except SequenceError as e:
            raise EvaluationError(str(e)) from e
    return gts


def curves_frame(scores: Sequence[SequenceScore]) -> pd.DataFrame:
    rows = []
    for s in scores:
        for kind, curve in (("precision", s.precision), ("success", s.success)):
            rows.extend(
                {"sequence": s.name, "curve": kind, "threshold": t, "value": v}
                for t, v in zip(curve.thresholds, curve.values)
            )
    return pd.DataFrame(rows, columns=["sequence", "curve", "threshold", "value"])


def summary_frame(scores: Sequence[SequenceScore]) -> pd.DataFrame:
    return pd.DataFrame(
        [{"sequence": s.name, "frames": s.frames, "precision_20": s.precision_20, "auc": s.auc, "fps": s.fps}
         for s in scores],
        columns=["sequence", "frames", "precision_20", "auc", "fps"],
    )


def plot_curves(scores: Sequence[SequenceScore], out_dir: str) -> List[str]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    for kind, xlabel in (("precision", "Location error threshold (px)"), ("success", "Overlap threshold")):
        fig, ax = plt.subplots(figsize=(5, 4))
        for s in scores:
            curve = getattr(s, kind)
            figure = s.precision_20 if kind == "precision" else s.auc
            ax.plot(curve.thresholds, curve.values, label=f"{s.name} [{figure:.3f}]")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("Precision" if kind == "precision" else "Success rate")
        ax.set_ylim(0, 1.05)
        ax.grid(True, alpha=0.3)
        ax.legend(loc="lower right" if kind == "precision" else "lower left", fontsize=7)
        path = os.path.join(out_dir, f"{kind}.png")
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written


def export(results: Sequence[TrackResult], scores: Optional[Sequence[SequenceScore]], out_dir: str,
           plots: bool = False) -> Dict[str, str]:
    """
    Write result files, curves.csv and summary.csv under ``out_dir``.
    Pass ``scores=None`` to write only the per-sequence result files.
    """
    if not results and not scores:
        raise EvaluationError("nothing to export: empty result set")
    os.makedirs(os.path.join(out_dir, "results"), exist_ok=True)
    written = {}
    for result in results:
        path = result_path(out_dir, result.name)
        write_boxes(path, result.boxes)
        written[result.name] = path
    if scores:
        written["curves"] = os.path.join(out_dir, "curves.csv")
        written["summary"] = os.path.join(out_dir, "summary.csv")
        curves_frame(scores).to_csv(written["curves"], index=False)
        summary_frame(scores).to_csv(written["summary"], index=False)
        if plots:
            for path in plot_curves(scores, out_dir):
                written[os.path.splitext(os.path.basename(path))[0]] = path
    logger.info("exported %d files to %s", len(written), out_dir)
    return written
