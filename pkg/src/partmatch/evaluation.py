"""Detection scoring: IoU, per-part average precision, pooled reports, and
graded occlusion of feature grids."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import FeatureGrid

OCCLUSION_FRACTIONS = {"L0": 0.0, "L1": 0.2, "L2": 0.4, "L3": 0.6}


def iou(a, b) -> float:
    """Intersection-over-union of two (x0, y0, x1, y1) boxes."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def average_precision(dets, gts, iou_thresh: float = 0.5):
    """AP for one part with greedy score-ordered matching.

    dets: list of (score, image_id, box); gts: dict image_id -> list of
    boxes.  Each ground-truth box is consumable once.  Precision is
    interpolated monotonically from the right (area under the PR curve).
    Returns (ap, tp, fp, fn); ap is None when there is no ground truth.
    """
    n_gt = sum(len(v) for v in gts.values())
    if n_gt == 0:
        return None, 0, len(dets), 0
    order = sorted(range(len(dets)), key=lambda k: (-dets[k][0], dets[k][1], dets[k][2]))
    used = {img: [False] * len(boxes) for img, boxes in gts.items()}
    hits = []
    for k in order:
        score, image_id, box = dets[k]
        best_iou, best_j = 0.0, -1
        for j, gt_box in enumerate(gts.get(image_id, [])):
            if used.get(image_id, [])[j]:
                continue
            v = iou(box, gt_box)
            if v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0 and best_iou >= iou_thresh:
            used[image_id][best_j] = True
            hits.append(True)
        else:
            hits.append(False)
    tp_cum = np.cumsum([1 if h else 0 for h in hits])
    fp_cum = np.cumsum([0 if h else 1 for h in hits])
    recall = tp_cum / n_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1)
    mrec = np.concatenate(([0.0], recall, [recall[-1] if len(recall) else 0.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    ap = 0.0
    for i in range(1, len(mrec)):
        ap += (mrec[i] - mrec[i - 1]) * mpre[i]
    tp = int(tp_cum[-1]) if len(tp_cum) else 0
    fp = int(fp_cum[-1]) if len(fp_cum) else 0
    return float(ap), tp, fp, n_gt - tp


@dataclass
class EvalReport:
    per_part_ap: dict[int, float | None]
    map: float
    counts: dict[int, tuple[int, int, int]]  # part -> (tp, fp, fn)
    level: str = "L0"
    iou_thresh: float = 0.5
    ap_interpolation: str = "continuous-right-max"

    def to_json_dict(self) -> dict:
        return {
            "map": self.map,
            "level": self.level,
            "iou_thresh": self.iou_thresh,
            "ap_interpolation": self.ap_interpolation,
            "per_part": {
                str(pid): {
                    "ap": self.per_part_ap[pid],
                    "tp": self.counts[pid][0],
                    "fp": self.counts[pid][1],
                    "fn": self.counts[pid][2],
                }
                for pid in sorted(self.per_part_ap)
            },
        }


def evaluate(dets_per_image, gts_per_image, iou_thresh: float = 0.5,
             level: str = "L0") -> EvalReport:
    """Pool detections per part across images and report AP and mAP.

    dets_per_image: dict image_id -> list of objects with .part_id, .box,
    .score (Detection works).  gts_per_image: dict image_id -> list of
    objects with .part_id and .box.  Parts without any ground truth are
    excluded from the mAP mean.
    """
    part_ids = set()
    for annos in gts_per_image.values():
        part_ids.update(a.part_id for a in annos)
    for dets in dets_per_image.values():
        part_ids.update(d.part_id for d in dets)
    per_part_ap: dict[int, float | None] = {}
    counts: dict[int, tuple[int, int, int]] = {}
    aps = []
    for pid in sorted(part_ids):
        dets = [
            (d.score, image_id, tuple(d.box))
            for image_id in sorted(dets_per_image)
            for d in dets_per_image[image_id]
            if d.part_id == pid
        ]
        gts = {
            image_id: [tuple(a.box) for a in annos if a.part_id == pid]
            for image_id, annos in gts_per_image.items()
        }
        gts = {k: v for k, v in gts.items() if v}
        ap, tp, fp, fn = average_precision(dets, gts, iou_thresh)
        per_part_ap[pid] = ap
        counts[pid] = (tp, fp, fn)
        if ap is not None:
            aps.append(ap)
    mean_ap = float(np.mean(aps)) if aps else 0.0
    return EvalReport(per_part_ap, mean_ap, counts, level, iou_thresh)


def format_report_table(reports, labels=None) -> str:
    """Aligned text table: one row per labeled report, one column per
    occlusion level (missing levels show '-')."""
    levels = ["L0", "L1", "L2", "L3"]
    if labels is None:
        labels = [f"run{k}" for k in range(len(reports))]
    rows: dict[str, dict[str, float]] = {}
    for label, report in zip(labels, reports):
        rows.setdefault(label, {})[report.level] = report.map
    width = max([len(l) for l in rows] + [8])
    lines = [" ".join(["Approach".ljust(width)] + [lv.rjust(7) for lv in levels])]
    for label in rows:
        cells = [
            f"{rows[label][lv] * 100:7.2f}" if lv in rows[label] else "      -"
            for lv in levels
        ]
        lines.append(" ".join([label.ljust(width)] + cells))
    return "\n".join(lines) + "\n"


def occlude_grid(g: FeatureGrid, level: str, seed: int = 0) -> FeatureGrid:
    """Replace a level-dependent fraction of cells with random unit vectors.

    The occluded cell set is a seed-determined permutation prefix, so levels
    nest: every cell hidden at L1 is also hidden at L2 and L3, and shared
    cells get identical replacement vectors.
    """
    if level not in OCCLUSION_FRACTIONS:
        raise ValueError(f"unknown occlusion level {level!r}")
    fraction = OCCLUSION_FRACTIONS[level]
    n = int(math.floor(fraction * g.cell_count))
    if n == 0:
        return FeatureGrid(g.rows, g.cols, g.dim, g.stride, g.data.copy(), g.meta)
    perm = np.random.default_rng(seed).permutation(g.cell_count)
    data = g.data.copy().reshape(g.cell_count, g.dim)
    for flat in perm[:n]:
        rng = np.random.default_rng((seed, int(flat), 2797))
        v = rng.standard_normal(g.dim)
        data[flat] = (v / np.linalg.norm(v)).astype(np.float32)
    return FeatureGrid(g.rows, g.cols, g.dim, g.stride, data.reshape(g.rows, g.cols, g.dim), g.meta)
