"""Confusion-matrix mIoU, boundary/interior band evaluation, and edge accuracy."""

from __future__ import annotations

import numpy as np

from .maskops import build_trimap_band, extract_edge_map
from .validation import VOID_LABEL, check_edge_map, check_label_mask


def confusion_matrix(pred, gt, n_classes: int, region=None,
                     void_label: int = VOID_LABEL) -> np.ndarray:
    """(C, C) counts with entry (g, p) = pixels of ground truth g predicted p.

    Pixels that are void in the ground truth, or outside the optional region
    filter, are not counted.  Predictions must not contain void.
    """
    pred = check_label_mask(pred, name="pred")
    gt = check_label_mask(gt, n_classes=n_classes, void_label=void_label, name="gt")
    if pred.shape != gt.shape:
        raise ValueError(f"pred shape {pred.shape} does not match gt shape {gt.shape}")
    if pred.max(initial=0) >= n_classes:
        raise ValueError(f"pred contains label {pred.max()} outside [0, {n_classes})")
    scored = gt != void_label
    if region is not None:
        region = check_edge_map(region, name="region")
        if region.shape != gt.shape:
            raise ValueError(f"region shape {region.shape} does not match {gt.shape}")
        scored &= region
    counts = np.bincount(gt[scored] * n_classes + pred[scored],
                         minlength=n_classes * n_classes)
    return counts.reshape(n_classes, n_classes).astype(np.int64)


def miou(cm: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean IoU over present classes, plus per-class IoUs (NaN when absent).

    A class is absent when its union (TP + FP + FN) is zero in the scored
    region; absent classes do not enter the mean.
    """
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got shape {cm.shape}")
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    present = union > 0
    if not present.any():
        raise ValueError("no class is present in the scored region")
    per_class = np.full(cm.shape[0], np.nan)
    per_class[present] = tp[present] / union[present]
    return float(per_class[present].mean()), per_class


def trimap_miou(preds, gts, widths, n_classes: int,
                void_label: int = VOID_LABEL) -> list[dict]:
    """Dataset-wide mIoU inside and outside ground-truth boundary bands.

    For each width, bands are built from the ground-truth edge maps and the
    confusion counts are accumulated over the whole dataset before a single
    mIoU is computed per region.  Returns one row per (width, region).
    """
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    widths = [int(w) for w in widths]
    if any(w < 1 for w in widths):
        raise ValueError(f"widths must be >= 1, got {widths}")
    edge_maps = [extract_edge_map(g, void_label=void_label) for g in gts]
    rows = []
    for width in widths:
        inside = np.zeros((n_classes, n_classes), dtype=np.int64)
        outside = np.zeros((n_classes, n_classes), dtype=np.int64)
        for pred, gt, edges in zip(preds, gts, edge_maps):
            band = build_trimap_band(edges, width)
            inside += confusion_matrix(pred, gt, n_classes, region=band,
                                       void_label=void_label)
            outside += confusion_matrix(pred, gt, n_classes, region=~band,
                                        void_label=void_label)
        for region, cm in (("boundary", inside), ("interior", outside)):
            score, per_class = miou(cm)
            rows.append({"width": width, "region": region,
                         "miou": score, "per_class": per_class})
    return rows


def edge_accuracy(edge_pred, gt_edges) -> float:
    """Fraction of pixels where the argmax edge channel matches the target.

    Channel 0 is non-edge, channel 1 is edge; ties resolve to channel 0.
    """
    pred = np.asarray(edge_pred, dtype=np.float64)
    gt = check_edge_map(gt_edges, name="gt_edges")
    if pred.ndim != 3 or pred.shape[0] != 2:
        raise ValueError(f"edge prediction must be (2, H, W), got shape {pred.shape}")
    if pred.shape[1:] != gt.shape:
        raise ValueError(f"prediction size {pred.shape[1:]} does not match {gt.shape}")
    decided = np.argmax(pred, axis=0).astype(bool)
    return float((decided == gt).mean())
