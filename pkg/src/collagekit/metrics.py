"""Detection evaluation: IoU-swept average precision and the corruption grid.

Conventions are the COCO ones: greedy score-ordered one-to-one matching,
101-point interpolated AP, thresholds 0.50:0.05:0.95, classes averaged only
when they have ground truth. Score ties break by stable input order so runs
are reproducible.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corruption import CORRUPTION_KINDS, SEVERITIES
from .dataset import Dataset

IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * k, 2) for k in range(10))
RECALL_POINTS = np.round(np.linspace(0.0, 1.0, 101), 2)


class IncompleteGridError(ValueError):
    """The corruption grid is missing at least one (kind, severity) cell."""


@dataclass(frozen=True)
class DetectionResult:
    image_id: int | str
    category_id: int
    box: tuple[float, float, float, float]
    score: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.box[2] <= 0 or self.box[3] <= 0:
            raise ValueError(f"detection box {self.box} has no area")


def load_detections(path: Path | str) -> list[DetectionResult]:
    """COCO results format: an array of {image_id, category_id, bbox, score}."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ValueError(f"{path}: expected a JSON array of detections")
    out = []
    for i, det in enumerate(raw):
        try:
            out.append(DetectionResult(image_id=det["image_id"],
                                       category_id=int(det["category_id"]),
                                       box=tuple(float(v) for v in det["bbox"]),
                                       score=float(det["score"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: detection {i}: {exc}") from exc
    return out


def save_detections(dets: list[DetectionResult], path: Path | str) -> None:
    payload = [{"image_id": d.image_id, "category_id": d.category_id,
                "bbox": list(d.box), "score": d.score} for d in dets]
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def iou(a, b) -> float:
    """Intersection over union of two (x, y, w, h) rectangles."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def match_detections(dets, gts, iou_threshold: float) -> list[bool]:
    """Greedy one-to-one matching. ``dets`` must already be sorted by
    descending score; each takes the highest-IoU unmatched ground truth at or
    above the threshold. Returns one TP/FP flag per detection."""
    gt_boxes = [g.box if hasattr(g, "box") else tuple(g) for g in gts]
    taken: set[int] = set()
    flags = []
    for det in dets:
        dbox = det.box if hasattr(det, "box") else tuple(det)
        best_iou, best_j = 0.0, -1
        for j, gbox in enumerate(gt_boxes):
            if j in taken:
                continue
            v = iou(dbox, gbox)
            if v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0 and best_iou >= iou_threshold:
            taken.add(best_j)
            flags.append(True)
        else:
            flags.append(False)
    return flags


def average_precision(flags, scores, gt_count: int) -> float | None:
    """101-point interpolated AP; None when the class has no ground truth
    (excluded from averaging rather than scored 0)."""
    if gt_count == 0:
        return None
    if len(flags) == 0:
        return 0.0
    flags = np.asarray(flags, dtype=bool)
    scores = np.asarray(scores, dtype=float)
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(flags[order])
    fp = np.cumsum(~flags[order])
    precision = tp / (tp + fp)
    recall = tp / gt_count
    # monotone envelope from the high-recall end
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(sampled.mean())


@dataclass
class EvalReport:
    per_class_ap: dict[int, float]
    map: float | None
    class_names: dict[int, str] = field(default_factory=dict)
    grid: dict[tuple[str, int], float] | None = None
    mapc: float | None = None

    def grid_rows(self) -> list[tuple[str, int, float]]:
        if self.grid is None:
            return []
        return [(kind, sev, self.grid[(kind, sev)])
                for kind in CORRUPTION_KINDS for sev in SEVERITIES
                if (kind, sev) in self.grid]

    def to_text(self) -> str:
        lines = ["detection evaluation", "====================", ""]
        if self.per_class_ap:
            lines.append("per-class AP (IoU 0.50:0.05:0.95):")
            for cid in sorted(self.per_class_ap):
                name = self.class_names.get(cid, str(cid))
                lines.append(f"  {name:<24s} {self.per_class_ap[cid]:.4f}")
        map_text = "n/a (no ground truth)" if self.map is None else f"{self.map:.4f}"
        lines.append(f"mAP: {map_text}")
        if self.grid is not None:
            lines.append("")
            lines.append("per-corruption mAP (mean over severities):")
            for kind in CORRUPTION_KINDS:
                vals = [self.grid[(kind, s)] for s in SEVERITIES
                        if (kind, s) in self.grid]
                if vals:
                    lines.append(f"  {kind:<20s} {sum(vals) / len(vals):.4f}")
        if self.mapc is not None:
            lines.append(f"mAPc: {self.mapc:.4f}")
        return "\n".join(lines) + "\n"


def map_coco(dets, gts: Dataset) -> EvalReport:
    """Evaluate detections against a dataset: AP per class averaged over the
    ten IoU thresholds, then averaged over classes with ground truth."""
    image_ids = {rec.id for rec in gts.images}
    for det in dets:
        if det.category_id not in gts.categories:
            raise ValueError(f"detection references unknown category id "
                             f"{det.category_id}")
        if det.image_id not in image_ids:
            raise ValueError(f"detection references unknown image id "
                             f"{det.image_id!r}")

    per_class: dict[int, float] = {}
    for cid in sorted(gts.categories):
        gt_count = sum(1 for rec in gts.images
                       for a in rec.annotations if a.category == cid)
        if gt_count == 0:
            continue
        ap_sum = 0.0
        for thr in IOU_THRESHOLDS:
            all_flags: list[bool] = []
            all_scores: list[float] = []
            for rec in gts.images:
                img_dets = [(i, d) for i, d in enumerate(dets)
                            if d.image_id == rec.id and d.category_id == cid]
                img_dets.sort(key=lambda t: (-t[1].score, t[0]))
                ordered = [d for _, d in img_dets]
                gt_boxes = [a for a in rec.annotations if a.category == cid]
                all_flags.extend(match_detections(ordered, gt_boxes, thr))
                all_scores.extend(d.score for d in ordered)
            ap_sum += average_precision(all_flags, all_scores, gt_count)
        per_class[cid] = ap_sum / len(IOU_THRESHOLDS)

    mean_ap = (sum(per_class.values()) / len(per_class)) if per_class else None
    return EvalReport(per_class_ap=per_class, map=mean_ap,
                      class_names=dict(gts.categories))


def mapc(grid: dict[tuple[str, int], float]) -> float:
    """Mean over the 15 corruption kinds of the per-kind mean over the five
    severities; requires the full 75-cell grid."""
    total = 0.0
    for kind in CORRUPTION_KINDS:
        kind_sum = 0.0
        for severity in SEVERITIES:
            if (kind, severity) not in grid:
                raise IncompleteGridError(
                    f"grid is missing cell ({kind}, {severity})")
            kind_sum += grid[(kind, severity)]
        total += kind_sum / 5
    return total / 15
