"""Localization mAP at temporal IoU thresholds and video classification mAP."""

from __future__ import annotations

import csv
import io
import json
import warnings
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .localization import temporal_iou

THUMOS_IOUS = tuple(round(0.1 * i, 1) for i in range(1, 8))
ANET_IOUS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class GroundTruthSegment:
    video_id: str
    t_start: int
    t_end: int
    class_id: int

    def __post_init__(self):
        if self.t_start >= self.t_end:
            raise ValueError(f"segment start {self.t_start} must precede end {self.t_end}")


def match_predictions(predictions, gt, iou_thr):
    """Greedy ActivityNet-style matching for one class.

    Predictions are visited by descending score (stable for ties); each takes
    the unmatched ground truth in its video with the highest IoU >= iou_thr,
    lower t_start winning IoU ties. Returns (sorted predictions, list of the
    matched gt index or None per prediction).
    """
    by_video = defaultdict(list)
    for gi, g in enumerate(gt):
        by_video[g.video_id].append(gi)
    order = sorted(range(len(predictions)), key=lambda i: -predictions[i].score)
    preds = [predictions[i] for i in order]
    taken = set()
    assignment = []
    for p in preds:
        best, best_key = None, None
        for gi in by_video.get(p.video_id, ()):
            if gi in taken:
                continue
            g = gt[gi]
            iou = temporal_iou((p.t_start, p.t_end), (g.t_start, g.t_end))
            if iou < iou_thr:
                continue
            key = (-iou, g.t_start)
            if best_key is None or key < best_key:
                best, best_key = gi, key
        if best is not None:
            taken.add(best)
        assignment.append(best)
    return preds, assignment


def interpolated_ap(precision, recall) -> float:
    """Area under the monotone precision envelope."""
    mprec = np.concatenate(([0.0], precision, [0.0]))
    mrec = np.concatenate(([0.0], recall, [1.0]))
    for i in range(len(mprec) - 2, -1, -1):
        mprec[i] = max(mprec[i], mprec[i + 1])
    idx = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(np.sum((mrec[idx] - mrec[idx - 1]) * mprec[idx]))


def average_precision(predictions, gt, iou_thr) -> float:
    """AP for a single class over all videos."""
    if not gt:
        warnings.warn("average_precision called with no ground truth; AP defined as 0", stacklevel=2)
        return 0.0
    if not predictions:
        return 0.0
    _, assignment = match_predictions(predictions, gt, iou_thr)
    tp = np.array([a is not None for a in assignment], dtype=np.float64)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / len(gt)
    precision = ctp / (ctp + cfp)
    return interpolated_ap(precision, recall)


@dataclass
class EvalReport:
    per_class_ap: dict
    map_at: dict
    avg_map: float
    classification_map: float | None = None
    classes: list = field(default_factory=list)

    def to_json(self) -> str:
        d = {
            "per_class_ap": {f"{t:g}": {str(c): ap for c, ap in aps.items()} for t, aps in self.per_class_ap.items()},
            "map_at": {f"{t:g}": m for t, m in self.map_at.items()},
            "avg_map": self.avg_map,
            "classification_map": self.classification_map,
            "classes": list(self.classes),
        }
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        """Rows are IoU thresholds, columns the classes and the mAP; a final AVG row."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iou"] + [f"class_{c}" for c in self.classes] + ["mAP"])
        for t in self.map_at:
            w.writerow([f"{t:g}"] + [_fmt(self.per_class_ap[t][c]) for c in self.classes] + [_fmt(self.map_at[t])])
        if self.map_at:
            per_class_avg = [np.mean([self.per_class_ap[t][c] for t in self.map_at]) for c in self.classes]
            w.writerow(["AVG"] + [_fmt(v) for v in per_class_avg] + [_fmt(self.avg_map)])
        return buf.getvalue()

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            per_class_ap={float(t): {int(c): ap for c, ap in aps.items()} for t, aps in d["per_class_ap"].items()},
            map_at={float(t): m for t, m in d["map_at"].items()},
            avg_map=d["avg_map"],
            classification_map=d.get("classification_map"),
            classes=d.get("classes", []),
        )


def _fmt(x):
    return f"{x:.6f}"


def evaluate(predictions, gt, iou_thresholds=THUMOS_IOUS, classification=None) -> EvalReport:
    """Per-class AP at each threshold; mAP averages classes that have ground truth."""
    if not len(iou_thresholds):
        raise ValueError("evaluate needs at least one IoU threshold")
    gt_by_class = defaultdict(list)
    for g in gt:
        gt_by_class[g.class_id].append(g)
    pred_by_class = defaultdict(list)
    for p in predictions:
        pred_by_class[p.class_id].append(p)
    classes = sorted(gt_by_class)
    per_class, map_at = {}, {}
    for t in iou_thresholds:
        aps = {c: average_precision(pred_by_class.get(c, []), gt_by_class[c], t) for c in classes}
        per_class[t] = aps
        map_at[t] = float(np.mean(list(aps.values()))) if aps else 0.0
    avg = float(np.mean(list(map_at.values())))
    return EvalReport(per_class, map_at, avg, classification, classes)


def ranking_ap(scores, positives) -> float:
    """Non-interpolated AP of one ranking: mean precision at each positive."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    hits = positives[order]
    if not hits.any():
        return 0.0
    ranks = np.arange(1, hits.size + 1)
    prec = np.cumsum(hits) / ranks
    return float(prec[hits].mean())


def classification_map(video_scores, labels) -> float:
    """Mean over foreground classes (with at least one positive video) of the
    label-ranking AP. ``video_scores`` and ``labels`` are N x (c+1)."""
    s = np.asarray(video_scores, dtype=np.float64)
    y = np.asarray(labels) > 0
    if s.shape != y.shape:
        raise ValueError(f"score matrix {s.shape} and label matrix {y.shape} differ")
    aps = [ranking_ap(s[:, j], y[:, j]) for j in range(s.shape[1] - 1) if y[:, j].any()]
    return float(np.mean(aps)) if aps else 0.0


def segment_coverage(predictions, gt, iou_thr=0.5) -> float:
    """Mean fraction of each ground-truth segment covered by the prediction
    matched to it at ``iou_thr`` (0 for unmatched segments)."""
    if not gt:
        return 0.0
    gt_by_class = defaultdict(list)
    for g in gt:
        gt_by_class[g.class_id].append(g)
    pred_by_class = defaultdict(list)
    for p in predictions:
        pred_by_class[p.class_id].append(p)
    covered = []
    for c, segs in gt_by_class.items():
        preds, assignment = match_predictions(pred_by_class.get(c, []), segs, iou_thr)
        matched = {gi: p for p, gi in zip(preds, assignment) if gi is not None}
        for gi, g in enumerate(segs):
            p = matched.get(gi)
            if p is None:
                covered.append(0.0)
                continue
            inter = max(0, min(p.t_end, g.t_end) - max(p.t_start, g.t_start))
            covered.append(inter / (g.t_end - g.t_start))
    return float(np.mean(covered))
