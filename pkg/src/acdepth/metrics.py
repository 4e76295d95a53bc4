"""Standard depth evaluation metrics with median scaling."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

REPORT_COLUMNS = ["absRel", "sqRel", "RMSE", "delta1", "RMSE_log", "delta2", "delta3", "count", "scale"]


@dataclass
class DepthEvalReport:
    absRel: float
    sqRel: float
    RMSE: float
    delta1: float
    RMSE_log: float
    delta2: float
    delta3: float
    count: int
    scale: float = 1.0

    def row(self) -> dict:
        return asdict(self)


def clamp_range(pred, gt, lo: float = 0.1, hi: float = 80.0):
    """Mask pixels with ground truth in [lo, hi] and clip predictions there."""
    if not lo < hi:
        raise ValueError("need lo < hi")
    pred, gt = np.asarray(pred, dtype=float), np.asarray(gt, dtype=float)
    mask = (gt >= lo) & (gt <= hi)
    return np.where(mask, np.clip(pred, lo, hi), pred), gt, mask


def lower_median(values) -> float:
    """Median that takes the lower middle element for even counts."""
    v = np.sort(np.asarray(values, dtype=float), axis=None)
    if v.size == 0:
        raise ValueError("median of an empty set")
    return float(v[(v.size - 1) // 2])


def median_scale(pred, gt, mask=None):
    pred, gt = np.asarray(pred, dtype=float), np.asarray(gt, dtype=float)
    mask = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("median scaling needs a nonempty mask")
    factor = lower_median(gt[mask]) / lower_median(pred[mask])
    return pred * factor, factor


def evaluate(pred, gt, mask=None, scale: float = 1.0) -> DepthEvalReport:
    pred, gt = np.asarray(pred, dtype=float), np.asarray(gt, dtype=float)
    mask = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("evaluate needs a nonempty mask")
    d, g = pred[mask], gt[mask]
    if np.any(d <= 0) or np.any(g <= 0):
        raise ValueError("depths must be positive")
    err = d - g
    ratio = np.maximum(d / g, g / d)
    return DepthEvalReport(
        absRel=float(np.mean(np.abs(err) / g)),
        sqRel=float(np.mean(err**2 / g)),
        RMSE=float(np.sqrt(np.mean(err**2))),
        delta1=float(100.0 * np.mean(ratio < 1.25)),
        RMSE_log=float(np.sqrt(np.mean((np.log(d) - np.log(g)) ** 2))),
        delta2=float(100.0 * np.mean(ratio < 1.25**2)),
        delta3=float(100.0 * np.mean(ratio < 1.25**3)),
        count=int(d.size),
        scale=float(scale),
    )


def evaluate_depth(pred, gt, lo: float = 0.1, hi: float = 80.0, scale: bool = True) -> DepthEvalReport:
    """Range mask, optional median scaling, clipping, then :func:`evaluate`."""
    gt = np.asarray(gt, dtype=float)
    mask = (gt >= lo) & (gt <= hi)
    factor = 1.0
    pred = np.asarray(pred, dtype=float)
    if scale:
        pred, factor = median_scale(pred, gt, mask)
    pred, gt, mask = clamp_range(pred, gt, lo, hi)
    return evaluate(pred, gt, mask, scale=factor)


def write_reports(path, rows, as_json: bool = False) -> None:
    """Write ``(label dict, report)`` rows as CSV, or JSON lines with ``as_json``."""
    records = [{**labels, **report.row()} for labels, report in rows]
    if as_json:
        with open(path, "w") as fh:
            for r in records:
                fh.write(json.dumps(r, sort_keys=False) + "\n")
        return
    if not records:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(records[0]))
        writer.writeheader()
        for r in records:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
