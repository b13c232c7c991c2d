"""Image and segmentation metrics with the column layout of the comparison table.

AP protocol (ours, not taken from any published evaluation): precision of
``scores > t`` over 101 thresholds t evenly spaced in [0, 1], integrated
with the trapezoid rule. An empty prediction has precision 1 when the
ground truth is also empty and 0 otherwise.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .losses import ssim

PSNR_CAP = 100.0
OPERATING_THRESHOLD = 0.5
AP_THRESHOLDS = np.linspace(0.0, 1.0, 101)
TABLE_COLUMNS = ("PSNR", "SSIM", "mPA", "mP", "mIoU", "mAP")


def psnr(render: np.ndarray, gt: np.ndarray) -> float:
    r = np.asarray(render, dtype=np.float64)
    t = np.asarray(gt, dtype=np.float64)
    if r.shape != t.shape:
        raise ValueError(f"image size mismatch: {r.shape} vs {t.shape}")
    mse = float(np.mean((r - t) ** 2))
    return PSNR_CAP if mse == 0 else min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def image_metrics(render: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """``(psnr_db, ssim)`` for images in [0, 1]."""
    p = psnr(render, gt)
    return p, ssim(render, gt)


def _precision(pred: np.ndarray, gt: np.ndarray) -> float:
    n_pred = int(pred.sum())
    if n_pred == 0:
        return 1.0 if not gt.any() else 0.0
    return float((pred & gt).sum() / n_pred)


def mask_metrics(pred: np.ndarray, gt: np.ndarray) -> dict:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    inter = int((pred & gt).sum())
    union = int((pred | gt).sum())
    return {
        "iou": 1.0 if union == 0 else inter / union,
        "pa": float((pred == gt).mean()),
        "precision": _precision(pred, gt),
        "recall": 1.0 if not gt.any() else inter / int(gt.sum()),
    }


def average_precision(scores: np.ndarray, gt: np.ndarray, thresholds=AP_THRESHOLDS) -> float:
    gt = np.asarray(gt, dtype=bool)
    prec = np.array([_precision(scores > t, gt) for t in thresholds])
    span = thresholds[-1] - thresholds[0]
    return float(np.trapezoid(prec, thresholds) / span) if hasattr(np, "trapezoid") \
        else float(np.trapz(prec, thresholds) / span)


@dataclass
class SegmentationReport:
    per_query: dict[str, dict] = field(default_factory=dict)

    def aggregate(self, key: str) -> float:
        vals = [m[key] for m in self.per_query.values()]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def miou(self) -> float:
        return self.aggregate("iou")

    @property
    def mpa(self) -> float:
        return self.aggregate("pa")

    @property
    def mp(self) -> float:
        return self.aggregate("precision")

    @property
    def map(self) -> float:
        return self.aggregate("ap")


def segmentation_metrics(scores: dict[str, list[np.ndarray]], gt_label_maps: list[np.ndarray],
                         query_labels: dict[str, int], threshold: float = OPERATING_THRESHOLD) -> SegmentationReport:
    """Per-query IoU / PA / P / AP pooled over all evaluated views.

    ``scores[name]`` holds one relevancy map (or binary mask) per view,
    aligned with ``gt_label_maps``; ``query_labels`` maps query names to
    ground-truth label ids.
    """
    report = SegmentationReport()
    for name, maps in scores.items():
        if name not in query_labels:
            raise ValueError(f"no ground-truth label mapping for query {name!r}")
        if len(maps) != len(gt_label_maps):
            raise ValueError(f"query {name!r}: {len(maps)} maps for {len(gt_label_maps)} views")
        s = np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in maps])
        gt = np.concatenate([(g == query_labels[name]).ravel() for g in gt_label_maps])
        m = mask_metrics(s > threshold, gt)
        m["ap"] = average_precision(s, gt)
        report.per_query[name] = m
    return report


def table_row(psnr_db: float, ssim_val: float, report: SegmentationReport) -> dict:
    return {"PSNR": psnr_db, "SSIM": ssim_val, "mPA": report.mpa, "mP": report.mp,
            "mIoU": report.miou, "mAP": report.map}


def write_table_csv(path, rows: list[dict], columns=("method",) + TABLE_COLUMNS):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.3f}" if isinstance(v, float) else v) for k, v in r.items()})


def format_table(rows: list[dict], columns=("method",) + TABLE_COLUMNS) -> str:
    cells = [[str(c) for c in columns]]
    for r in rows:
        cells.append([f"{r[c]:.3f}" if isinstance(r.get(c), float) else str(r.get(c, "")) for c in columns])
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    buf = io.StringIO()
    for k, row in enumerate(cells):
        buf.write("  ".join(v.rjust(w) for v, w in zip(row, widths)) + "\n")
        if k == 0:
            buf.write("  ".join("-" * w for w in widths) + "\n")
    return buf.getvalue()
