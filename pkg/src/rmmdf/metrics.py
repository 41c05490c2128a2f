"""Saliency evaluation: MAE, dataset-level PR curve, F-measure summaries.

Conventions (shared by every consumer in this package):

* 256 binarization thresholds k/255 for k in [0, 255]; a pixel is
  predicted foreground when ``pred >= threshold``.
* The PR curve accumulates TP/FP/FN over the whole dataset per threshold.
  Precision is defined as 1 when nothing is predicted foreground (there
  are no false positives); recall at such a threshold is 0.
* Ground-truth masks with zero foreground pixels have undefined recall;
  they are excluded from PR/F computations and reported, but still count
  toward MAE.
* F-measure uses beta^2 = 0.3 by default and is 0 when its denominator
  vanishes. ``max_f`` maximizes F over the curve's 256 points; ``avg_f``
  averages per-image F at the adaptive threshold min(1, 2 * mean(pred)).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ShapeError

N_THRESHOLDS = 256
THRESHOLDS = np.arange(N_THRESHOLDS) / (N_THRESHOLDS - 1.0)
DEFAULT_BETA_SQ = 0.3


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ShapeError(
            f"prediction {pred.shape} and ground truth {gt.shape} differ in size"
        )
    if not np.isin(gt, (0, 1)).all():
        raise ShapeError("ground-truth mask must be strictly binary (0/1)")


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute per-pixel error."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_pair(pred, gt)
    return float(np.abs(pred - gt).mean())


@dataclass
class PrCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray
    excluded: list[int] = field(default_factory=list)


def _threshold_counts(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, ...]:
    """TP/FP/FN/TN of one image at every threshold (vectorized)."""
    binary = pred.reshape(1, -1) >= THRESHOLDS.reshape(-1, 1)
    fg = gt.reshape(1, -1).astype(bool)
    tp = (binary & fg).sum(axis=1)
    fp = (binary & ~fg).sum(axis=1)
    fn = (~binary & fg).sum(axis=1)
    tn = (~binary & ~fg).sum(axis=1)
    return tp, fp, fn, tn


def pr_curve(preds: list[np.ndarray], gts: list[np.ndarray]) -> PrCurve:
    """Dataset-level precision/recall at 256 thresholds."""
    if len(preds) == 0 or len(preds) != len(gts):
        raise ShapeError("need equally many (and at least one) predictions and masks")
    tp = np.zeros(N_THRESHOLDS, dtype=np.int64)
    fp = np.zeros(N_THRESHOLDS, dtype=np.int64)
    fn = np.zeros(N_THRESHOLDS, dtype=np.int64)
    tn = np.zeros(N_THRESHOLDS, dtype=np.int64)
    excluded = []
    for idx, (pred, gt) in enumerate(zip(preds, gts)):
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt)
        _check_pair(pred, gt)
        if gt.sum() == 0:
            excluded.append(idx)
            continue
        t, f, n, tneg = _threshold_counts(pred, gt)
        tp += t
        fp += f
        fn += n
        tn += tneg
    if len(excluded) == len(preds):
        raise ShapeError("every ground-truth mask is empty; recall is undefined")
    predicted = tp + fp
    precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 1.0)
    recall = tp / (tp + fn)
    return PrCurve(THRESHOLDS.copy(), precision, recall, tp, fp, fn, tn, excluded)


def f_measure(precision, recall, beta_sq: float = DEFAULT_BETA_SQ):
    """(1 + b^2) P R / (b^2 P + R), 0 where the denominator is 0."""
    precision = np.asarray(precision, dtype=np.float64)
    recall = np.asarray(recall, dtype=np.float64)
    denom = beta_sq * precision + recall
    num = (1 + beta_sq) * precision * recall
    out = np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class ImageMetrics:
    id: str
    mae: float
    adaptive_threshold: float
    precision: float
    recall: float
    f_adaptive: float
    excluded: bool


@dataclass
class MetricReport:
    max_f: float
    avg_f: float
    mae: float
    per_image: list[ImageMetrics]
    excluded: list[str]


def _adaptive_image_metrics(pred: np.ndarray, gt: np.ndarray, sample_id: str,
                            beta_sq: float) -> ImageMetrics:
    m = mae(pred, gt)
    thr = min(1.0, 2.0 * float(pred.mean()))
    if gt.sum() == 0:
        return ImageMetrics(sample_id, m, thr, 0.0, 0.0, 0.0, excluded=True)
    binary = pred >= thr
    tp = int((binary & (gt == 1)).sum())
    predicted = int(binary.sum())
    precision = tp / predicted if predicted > 0 else 1.0
    recall = tp / int(gt.sum())
    return ImageMetrics(
        sample_id, m, thr, precision, recall,
        f_measure(precision, recall, beta_sq), excluded=False,
    )


def summarize(
    preds: list[np.ndarray],
    gts: list[np.ndarray],
    ids: list[str] | None = None,
    beta_sq: float = DEFAULT_BETA_SQ,
) -> MetricReport:
    """Dataset report: max-F over the curve, adaptive average F, MAE."""
    if ids is None:
        ids = [str(i) for i in range(len(preds))]
    if not (len(preds) == len(gts) == len(ids)) or len(preds) == 0:
        raise ShapeError("need equally many (and at least one) predictions and masks")
    curve = pr_curve(preds, gts)
    max_f = float(np.max(f_measure(curve.precision, curve.recall, beta_sq)))
    per_image = [
        _adaptive_image_metrics(np.asarray(p, dtype=np.float64), np.asarray(g), i, beta_sq)
        for p, g, i in zip(preds, gts, ids)
    ]
    scored = [im.f_adaptive for im in per_image if not im.excluded]
    avg_f = float(np.mean(scored)) if scored else 0.0
    overall_mae = float(np.mean([im.mae for im in per_image]))
    excluded = [im.id for im in per_image if im.excluded]
    return MetricReport(max_f, avg_f, overall_mae, per_image, excluded)


# -- export --------------------------------------------------------------------


def write_curve_csv(curve: PrCurve, path: str, beta_sq: float = DEFAULT_BETA_SQ) -> None:
    """One header line plus exactly 256 data rows."""
    f = f_measure(curve.precision, curve.recall, beta_sq)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "precision", "recall", "f_measure"])
        for k in range(N_THRESHOLDS):
            writer.writerow(
                [
                    f"{curve.thresholds[k]:.9f}",
                    f"{curve.precision[k]:.9f}",
                    f"{curve.recall[k]:.9f}",
                    f"{f[k]:.9f}",
                ]
            )


def write_report_csv(report: MetricReport, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["id", "mae", "adaptive_threshold", "precision", "recall",
             "f_adaptive", "excluded"]
        )
        for im in report.per_image:
            writer.writerow(
                [im.id, f"{im.mae:.9f}", f"{im.adaptive_threshold:.9f}",
                 f"{im.precision:.9f}", f"{im.recall:.9f}", f"{im.f_adaptive:.9f}",
                 int(im.excluded)]
            )
        writer.writerow(["__summary__", f"{report.mae:.9f}", "", "", "",
                         f"{report.avg_f:.9f}", len(report.excluded)])


def write_report_json(report: MetricReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(asdict(report), fh, indent=2)
