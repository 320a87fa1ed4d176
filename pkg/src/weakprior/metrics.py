"""Segmentation metrics: IoU, boundary-band (trimap) accuracy, confusion matrix."""

import io
import csv
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_dilation

from ._validation import DimensionError, check_label_map


@dataclass
class IoUReport:
    per_class: list  # float, or None for a class absent from both preds and gts
    mean_iou: float

    def rows(self):
        return [(k, v) for k, v in enumerate(self.per_class)]


def _pairs(preds, gts, n_labels):
    if isinstance(preds, np.ndarray) and preds.ndim == 2:
        preds, gts = [preds], [gts]
    preds = list(preds)
    gts = list(gts)
    if len(preds) != len(gts):
        raise DimensionError(f"{len(preds)} predictions for {len(gts)} ground truths")
    for p, g in zip(preds, gts):
        p = check_label_map(p, n_labels, "prediction")
        g = check_label_map(g, n_labels, "ground truth")
        if p.shape != g.shape:
            raise DimensionError(f"prediction {p.shape} and ground truth {g.shape} differ in size")
        yield p, g


def confusion(preds, gts, n_classes):
    """(C+1, C+1) pixel counts, rows = ground truth, columns = prediction."""
    n = n_classes + 1
    counts = np.zeros((n, n), dtype=np.int64)
    for p, g in _pairs(preds, gts, n):
        counts += np.bincount(g.ravel() * n + p.ravel(), minlength=n * n).reshape(n, n)
    return counts


def iou(preds, gts, n_classes):
    """Per-class IoU accumulated over all image pairs.

    Labels run over ``0..n_classes``. A class with empty union across the whole
    dataset gets ``None`` and is left out of the mean.
    """
    cm = confusion(preds, gts, n_classes)
    inter = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - inter
    per_class = [float(i / u) if u else None for i, u in zip(inter, union)]
    seen = [v for v in per_class if v is not None]
    return IoUReport(per_class, float(np.mean(seen)) if seen else float("nan"))


def boundary_band(gt, band_px):
    """Pixels within Chebyshev distance ``band_px - 1`` of a label boundary.

    A boundary pixel has a 4-neighbour with a different label, so
    ``band_px=1`` selects the boundary pixels on both sides of every edge.
    """
    if band_px < 1:
        raise ValueError(f"band_px must be >= 1, got {band_px}")
    gt = check_label_map(gt)
    edge = np.zeros(gt.shape, dtype=bool)
    dv = gt[1:] != gt[:-1]
    dh = gt[:, 1:] != gt[:, :-1]
    edge[1:] |= dv
    edge[:-1] |= dv
    edge[:, 1:] |= dh
    edge[:, :-1] |= dh
    if band_px == 1 or not edge.any():
        return edge
    size = 2 * (band_px - 1) + 1
    return binary_dilation(edge, structure=np.ones((size, size), dtype=bool))


def trimap_accuracy(preds, gts, band_px):
    """Pixel accuracy restricted to the boundary band of the ground truth.

    Accepts one (pred, gt) pair or two aligned lists (counts are pooled).
    Returns None when the ground truth has no boundary at all.
    """
    correct = 0
    total = 0
    for p, g in _pairs(preds, gts, None):
        band = boundary_band(g, band_px)
        correct += int((p[band] == g[band]).sum())
        total += int(band.sum())
    if total == 0:
        return None
    return correct / total


def pixel_accuracy(preds, gts):
    correct = 0
    total = 0
    for p, g in _pairs(preds, gts, None):
        correct += int((p == g).sum())
        total += g.size
    return correct / total


def format_iou_table(report):
    lines = [f"{'class':>5}  {'IoU':>8}"]
    for k, v in report.rows():
        lines.append(f"{k:>5}  {'-':>8}" if v is None else f"{k:>5}  {v:8.4f}")
    lines.append(f"{'mean':>5}  {report.mean_iou:8.4f}")
    return "\n".join(lines)


def format_confusion_table(cm):
    n = cm.shape[0]
    width = max(5, len(str(int(cm.max()))) + 1)
    head = "gt\\pr" + "".join(f"{j:>{width}}" for j in range(n))
    rows = [f"{i:>5}" + "".join(f"{int(v):>{width}}" for v in cm[i]) for i in range(n)]
    return "\n".join([head] + rows)


def iou_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "iou"])
    for k, v in report.rows():
        w.writerow([k, "" if v is None else f"{v:.6f}"])
    w.writerow(["mean", f"{report.mean_iou:.6f}"])
    return buf.getvalue()


def confusion_csv(cm):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["gt"] + [str(j) for j in range(cm.shape[0])])
    for i, row in enumerate(cm):
        w.writerow([i] + [int(v) for v in row])
    return buf.getvalue()
