"""COCO-style average precision over rotated boxes."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .geometry import RotatedBox, rotated_iou_matrix, boxes_to_array

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
RECALL_POINTS = 101


@dataclass(frozen=True)
class Detection:
    image_id: object
    label: object
    score: float
    box: RotatedBox


@dataclass(frozen=True)
class GroundTruth:
    image_id: object
    label: object
    box: RotatedBox


def _match_class(dets, gts, thr):
    """Greedy score-ordered matching; returns (tp flags in score order, n_gt)."""
    order = sorted(range(len(dets)), key=lambda k: -dets[k].score)  # stable on ties
    by_image = defaultdict(list)
    for g in gts:
        by_image[g.image_id].append(g)
    ious = {img: None for img in by_image}
    taken = {img: np.zeros(len(v), dtype=bool) for img, v in by_image.items()}
    tp = np.zeros(len(order), dtype=bool)
    for rank, k in enumerate(order):
        d = dets[k]
        cands = by_image.get(d.image_id)
        if not cands:
            continue
        if ious[d.image_id] is None:
            img_dets = [x for x in dets if x.image_id == d.image_id]
            ious[d.image_id] = dict(zip(
                (id(x) for x in img_dets),
                rotated_iou_matrix(boxes_to_array([x.box for x in img_dets]),
                                   boxes_to_array([g.box for g in cands]))))
        row = ious[d.image_id][id(d)]
        best, best_iou = -1, thr
        for j, iou in enumerate(row):
            if taken[d.image_id][j] or iou < best_iou:
                continue
            if best < 0 or iou > row[best]:
                best, best_iou = j, iou
        if best >= 0:
            taken[d.image_id][best] = True
            tp[rank] = True
    return tp, len(gts)


def _interpolated_ap(tp: np.ndarray, n_gt: int) -> float:
    if n_gt == 0:
        return float("nan")
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, tp.size + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    total = 0.0
    for k in range(RECALL_POINTS):
        # first rank whose recall reaches k/100, compared in integers
        hit = np.flatnonzero(ctp * (RECALL_POINTS - 1) >= k * n_gt)
        total += envelope[hit[0]] if hit.size else 0.0
    return total / RECALL_POINTS


def average_precision(dets, gts, iou_threshold: float = 0.5):
    """Per-class AP and their mean over classes that have ground truth."""
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("IoU threshold must lie in (0, 1)")
    classes = sorted({g.label for g in gts}, key=str)
    per_class = {}
    for c in classes:
        tp, n_gt = _match_class([d for d in dets if d.label == c], [g for g in gts if g.label == c],
                                iou_threshold)
        per_class[c] = _interpolated_ap(tp, n_gt)
    mean = float(np.mean(list(per_class.values()))) if per_class else float("nan")
    return per_class, mean


def ap_range(dets, gts) -> tuple[float, float, float]:
    """(AP50, AP75, AP50:95); NaN everywhere when there is no ground truth."""
    if not gts:
        return float("nan"), float("nan"), float("nan")
    means = {t: average_precision(dets, gts, t)[1] for t in COCO_THRESHOLDS}
    return means[0.5], means[0.75], float(np.mean(list(means.values())))
