#!/usr/bin/env python3
"""
Missed-surface evaluation for Lumen
Green-dominance binarization, per-pixel accuracy, Dice, temporal stability,
overlays and the JSON / CSV / HTML report files
"""

import json
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Dict, List

import numpy as np
import pandas as pd

from frame_io import frame_id_of, list_frames, load_mask
from lumen_config import ConfigurationError

GREEN = np.array([-1.0, 1.0, -1.0], dtype=np.float32)


class FrameIdMismatch(ConfigurationError):
    """Prediction and ground-truth folders do not hold the same frame ids"""

    def __init__(self, missing_pred, missing_gt):
        self.missing_pred = sorted(missing_pred)
        self.missing_gt = sorted(missing_gt)
        parts = []
        if self.missing_pred:
            parts.append(f"missing predictions: {', '.join(self.missing_pred)}")
        if self.missing_gt:
            parts.append(f"missing ground truth: {', '.join(self.missing_gt)}")
        super().__init__("Frame ids differ (" + '; '.join(parts or ['no common frames']) + ")")


def _check_dims(a, b):
    if a.shape != b.shape:
        raise ConfigurationError(f"Mask dims differ: {a.shape} vs {b.shape}")


def binarize_missed(image, tau=0.2):
    """Pixel is missed when green - max(red, blue) > tau on the [0, 1] channel scale"""
    scaled = (np.asarray(image, dtype=np.float64) + 1.0) / 2.0
    return scaled[..., 1] - np.maximum(scaled[..., 0], scaled[..., 2]) > tau


def confusion(pred, gt):
    """(TP, TN, FP, FN) pixel counts"""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    _check_dims(pred, gt)
    return (int(np.sum(pred & gt)), int(np.sum(~pred & ~gt)),
            int(np.sum(pred & ~gt)), int(np.sum(~pred & gt)))


def pixel_accuracy(pred, gt):
    """(TP + TN) / pixel count"""
    tp, tn, fp, fn = confusion(pred, gt)
    return (tp + tn) / (tp + tn + fp + fn)


def dice(pred, gt):
    """2 |pred & gt| / (|pred| + |gt|), 1.0 when both are empty"""
    tp, _, fp, fn = confusion(pred, gt)
    denominator = 2 * tp + fp + fn
    if denominator == 0:
        return 1.0
    return 2 * tp / denominator


def temporal_stability(masks):
    """Mean Dice between consecutive masks of one trajectory"""
    masks = list(masks)
    if len(masks) < 2:
        raise ConfigurationError("Temporal stability needs at least 2 frames")
    return float(np.mean([dice(a, b) for a, b in zip(masks[:-1], masks[1:])]))


def overlay(oc_input, mask, alpha=0.5):
    """Blend mask pixels of an image in [-1, 1] towards pure green"""
    oc_input = np.asarray(oc_input, dtype=np.float32)
    mask = np.asarray(mask, dtype=bool)
    if oc_input.shape[:2] != mask.shape:
        raise ConfigurationError(f"Mask dims {mask.shape} do not match image {oc_input.shape[:2]}")
    blended = (1.0 - alpha) * oc_input + alpha * GREEN
    return np.where(mask[..., None], blended, oc_input).astype(np.float32)


@dataclass
class MetricsReport:
    accuracy: float = 0.0
    dice: float = 0.0
    pooled_accuracy: float = 0.0
    pooled_dice: float = 0.0
    frame_count: int = 0
    rows: List[Dict] = field(default_factory=list)

    def aggregate(self):
        values = asdict(self)
        values.pop('rows')
        return values


def evaluate_masks(pairs):
    """
    Metrics over (frame_id, pred, gt) triples

    Aggregate accuracy and Dice are unweighted frame means; the pooled values
    count every pixel of every frame together.
    """
    rows = []
    totals = np.zeros(4, dtype=np.int64)
    for frame_id, pred, gt in pairs:
        counts = confusion(pred, gt)
        totals += counts
        rows.append({
            'frame_id': frame_id,
            'accuracy': pixel_accuracy(pred, gt),
            'dice': dice(pred, gt),
            'tp': counts[0], 'tn': counts[1], 'fp': counts[2], 'fn': counts[3],
        })
    if not rows:
        raise ConfigurationError("No frames to evaluate")

    tp, tn, fp, fn = (int(v) for v in totals)
    pooled_dice = 1.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
    return MetricsReport(
        accuracy=float(np.mean([r['accuracy'] for r in rows])),
        dice=float(np.mean([r['dice'] for r in rows])),
        pooled_accuracy=(tp + tn) / (tp + tn + fp + fn),
        pooled_dice=pooled_dice,
        frame_count=len(rows),
        rows=rows,
    )


def evaluate_mask_dirs(pred_dir, gt_dir):
    """Compare mask PNGs matched by frame id; any id present on one side only is an error"""
    pred = {frame_id_of(p): p for p in list_frames(pred_dir)}
    gt = {frame_id_of(p): p for p in list_frames(gt_dir)}
    missing_pred = set(gt) - set(pred)
    missing_gt = set(pred) - set(gt)
    if missing_pred or missing_gt or not pred:
        raise FrameIdMismatch(missing_pred, missing_gt)

    return evaluate_masks((frame_id, load_mask(pred[frame_id]), load_mask(gt[frame_id]))
                          for frame_id in sorted(pred))


def write_metrics_report(report: MetricsReport, out_dir, name='metrics'):
    """metrics.json with the aggregate, metrics.csv with one row per frame"""
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, f"{name}.json")
    csv_path = os.path.join(out_dir, f"{name}.csv")
    with open(json_path, 'w') as f:
        json.dump(report.aggregate(), f, indent=2)
    pd.DataFrame(report.rows, columns=['frame_id', 'accuracy', 'dice', 'tp', 'tn', 'fp', 'fn']) \
        .to_csv(csv_path, index=False, float_format='%.10g')
    return json_path, csv_path


def write_contact_sheet(out_dir, entries, title='Lumen results'):
    """
    Static index.html with one row per frame

    Args:
        entries: list of dicts; keys ending in '_path' are shown as images, relative to out_dir
    """
    rows = []
    for entry in entries:
        row = {}
        for key, value in entry.items():
            if key.endswith('_path'):
                rel = os.path.relpath(value, out_dir)
                row[key[:-5]] = f'<img src="{rel}" width="128">'
            else:
                row[key] = value
        rows.append(row)

    table = pd.DataFrame(rows).to_html(escape=False, index=False)
    path = os.path.join(out_dir, 'index.html')
    with open(path, 'w') as f:
        f.write(f"<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{title}</title></head>\n"
                f"<body><h1>{title}</h1>\n{table}\n</body></html>\n")
    return path


def main():
    """evaluate_missed.py <pred_dir> <gt_dir>"""
    if len(sys.argv) < 3:
        print("Usage: evaluate_missed.py <pred_dir> <gt_dir>")
        sys.exit(2)
    try:
        report = evaluate_mask_dirs(sys.argv[1], sys.argv[2])
    except ConfigurationError as e:
        print(f"❌ {e}")
        sys.exit(2)
    print("=== Missed-surface metrics ===")
    for key, value in report.aggregate().items():
        print(f"{key}: {value}")


if __name__ == "__main__":
    main()
