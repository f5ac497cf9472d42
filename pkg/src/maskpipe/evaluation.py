"""Detection quality metrics: IoU, greedy matching, AP, and mAP.

Matching is the standard greedy protocol: detections are visited in
descending score order (ties keep input order) and each one claims the
unmatched ground-truth object of highest IoU, provided that IoU clears
the threshold.  Per-class average precision uses all-point
interpolation (the area under the precision envelope), and mAP is the
unweighted mean over classes that have at least one ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import fsum
from typing import Mapping, Sequence

import numpy as np

from .annotate import Annotation, AnnotationDoc, Rle, rle_decode
from .errors import DimsMismatchError, NoClassesError, NoGroundTruthError, ParseError
from .tensor_io import BinaryMask

__all__ = [
    "Detection",
    "MatchOutcome",
    "EvalResult",
    "mask_iou",
    "bbox_iou",
    "match_detections",
    "average_precision",
    "mean_ap",
    "evaluate",
]

Box = tuple[float, float, float, float]  # (x, y, w, h)


@dataclass(frozen=True)
class Detection:
    """One scored prediction; segmentation is an Rle or an (x, y, w, h) box."""

    image_id: int
    category_id: int
    score: float
    segmentation: Rle | Box

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"detection score must be finite, got {self.score}")


@dataclass(frozen=True)
class MatchOutcome:
    """Scored detections of one class flagged TP/FP, plus the GT count."""

    matches: tuple[tuple[float, bool], ...]
    num_gt: int


@dataclass(frozen=True)
class EvalResult:
    per_class_ap: dict[int, float]
    map_value: float
    iou_threshold: float
    mode: str


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """|a n b| / |a u b|; 0.0 when both masks are empty."""
    if (a.height, a.width) != (b.height, b.width):
        raise DimsMismatchError(
            f"mask dims differ: {a.height}x{a.width} vs {b.height}x{b.width}"
        )
    intersection = int(np.count_nonzero(a.data & b.data))
    union = int(np.count_nonzero(a.data | b.data))
    return intersection / union if union else 0.0


def bbox_iou(a: Box, b: Box) -> float:
    """Intersection over union of two (x, y, w, h) rectangles."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise ValueError("box width and height must be positive")
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    intersection = iw * ih
    return intersection / (aw * ah + bw * bh - intersection)


def _pair_iou(det_seg: Rle | Box, gt_seg: Rle | Box) -> float:
    if isinstance(det_seg, Rle) and isinstance(gt_seg, Rle):
        return mask_iou(rle_decode(det_seg), rle_decode(gt_seg))
    if isinstance(det_seg, Rle) or isinstance(gt_seg, Rle):
        raise TypeError("cannot mix mask and box payloads in one match")
    return bbox_iou(det_seg, gt_seg)


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[Rle | Box],
    iou_thr: float,
) -> MatchOutcome:
    """Greedy TP/FP assignment for one image and one class.

    Each detection, in descending score order, claims the unmatched
    ground truth of highest IoU when that IoU is >= ``iou_thr``; every
    ground truth can be claimed once.  IoU ties keep the earlier
    ground-truth entry, score ties keep the earlier detection.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    claimed = [False] * len(gts)
    matches = []
    for i in order:
        best_iou, best_gt = 0.0, -1
        for g, gt_seg in enumerate(gts):
            if claimed[g]:
                continue
            iou = _pair_iou(dets[i].segmentation, gt_seg)
            if iou > best_iou:
                best_iou, best_gt = iou, g
        is_tp = best_gt >= 0 and best_iou >= iou_thr
        if is_tp:
            claimed[best_gt] = True
        matches.append((dets[i].score, is_tp))
    return MatchOutcome(matches=tuple(matches), num_gt=len(gts))


def average_precision(outcome: MatchOutcome) -> float:
    """All-point interpolated AP: area under the precision envelope."""
    if outcome.num_gt < 1:
        raise NoGroundTruthError("AP is undefined without ground truth")
    if not outcome.matches:
        return 0.0
    flags = np.array([tp for _, tp in outcome.matches], dtype=np.float64)
    tp_cum = np.cumsum(flags)
    fp_cum = np.cumsum(1.0 - flags)
    recall = tp_cum / outcome.num_gt
    precision = tp_cum / (tp_cum + fp_cum)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    terms = []
    previous_recall = 0.0
    for i, (_, is_tp) in enumerate(outcome.matches):
        if is_tp:
            terms.append((recall[i] - previous_recall) * envelope[i])
            previous_recall = recall[i]
    return fsum(terms)


def mean_ap(
    per_class_ap: Mapping[int, float],
    gt_counts: Mapping[int, int] | None = None,
) -> float:
    """Unweighted mean AP over classes with ground truth.

    ``gt_counts`` marks which classes actually have ground-truth
    instances; classes with zero are excluded.  Without it every listed
    class counts.
    """
    if gt_counts is None:
        eligible = dict(per_class_ap)
    else:
        eligible = {c: ap for c, ap in per_class_ap.items() if gt_counts.get(c, 0) > 0}
    if not eligible:
        raise NoClassesError("no class has ground truth")
    return fsum(eligible.values()) / len(eligible)


def _detection_payload(ann: Annotation, mode: str) -> Rle | Box:
    if mode == "segm":
        if not isinstance(ann.segmentation, Rle):
            raise ParseError(
                f"annotation {ann.id}: segm-mode evaluation needs RLE segmentations"
            )
        return ann.segmentation
    return ann.bbox


def evaluate(
    preds: AnnotationDoc,
    gt: AnnotationDoc,
    iou_thr: float = 0.5,
    mode: str = "segm",
) -> EvalResult:
    """Score a prediction document against ground truth.

    Matching runs independently per image and class, outcomes aggregate
    per class across images, and mAP averages the per-class APs over
    classes with at least one ground-truth annotation.  Images are
    paired by id, so both documents must index the same image set.
    """
    if mode not in ("segm", "bbox"):
        raise ValueError(f"mode must be 'segm' or 'bbox', got {mode!r}")
    for ann in preds.annotations:
        if ann.score is None:
            raise ParseError(f"prediction annotation {ann.id} has no score")

    gt_by_group: dict[tuple[int, int], list[Rle | Box]] = {}
    gt_counts: dict[int, int] = {}
    for ann in gt.annotations:
        gt_by_group.setdefault((ann.image_id, ann.category_id), []).append(
            _detection_payload(ann, mode)
        )
        gt_counts[ann.category_id] = gt_counts.get(ann.category_id, 0) + 1

    det_by_group: dict[tuple[int, int], list[tuple[int, Detection]]] = {}
    for index, ann in enumerate(preds.annotations):
        det = Detection(ann.image_id, ann.category_id, float(ann.score), _detection_payload(ann, mode))
        det_by_group.setdefault((ann.image_id, ann.category_id), []).append((index, det))

    per_class: dict[int, list[tuple[float, bool, int]]] = {c: [] for c in gt_counts}
    for (image_id, category_id), group in det_by_group.items():
        if category_id not in gt_counts:
            continue  # zero-GT class: excluded from the mean entirely
        indices = [i for i, _ in group]
        outcome = match_detections(
            [d for _, d in group], gt_by_group.get((image_id, category_id), []), iou_thr
        )
        # match_detections reorders by score; recover the per-detection
        # global input index to keep cross-image tie-breaks well defined.
        order = sorted(range(len(group)), key=lambda k: (-group[k][1].score, k))
        for (score, is_tp), k in zip(outcome.matches, order):
            per_class[category_id].append((score, is_tp, indices[k]))

    per_class_ap: dict[int, float] = {}
    for category_id, entries in per_class.items():
        entries.sort(key=lambda e: (-e[0], e[2]))
        outcome = MatchOutcome(
            matches=tuple((score, is_tp) for score, is_tp, _ in entries),
            num_gt=gt_counts[category_id],
        )
        per_class_ap[category_id] = average_precision(outcome)

    return EvalResult(
        per_class_ap=per_class_ap,
        map_value=mean_ap(per_class_ap, gt_counts),
        iou_threshold=iou_thr,
        mode=mode,
    )
