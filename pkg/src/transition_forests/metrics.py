"""Recognition and detection metrics.

Detection scoring used here: per-class frame F1 over the per-frame
predicted labels (background excluded from the average), and start/end
localisation rates (SL/EL) over ground-truth events matched greedily by
overlap to same-label predicted events.  A matched start (end) counts when
it lies within ``tol_ratio`` times the ground-truth event length.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .inference import DetectionEvent


@dataclass
class RecognitionReport:
    overall_accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray


@dataclass
class DetectionReport:
    per_class_f1: np.ndarray
    overall_f1: float
    sl: float
    el: float
    matched: int
    n_gt_events: int
    inference_time_s: float = 0.0


def recognition_metrics(predictions, ground_truth, n_labels: int | None = None) -> RecognitionReport:
    """Accuracy and confusion counts (rows: truth, columns: prediction)."""
    pred = np.asarray(predictions, dtype=np.int64)
    gt = np.asarray(ground_truth, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(gt)} labels")
    if n_labels is None:
        n_labels = int(max(pred.max(initial=-1), gt.max(initial=-1))) + 1
    confusion = np.zeros((n_labels, n_labels), dtype=np.int64)
    np.add.at(confusion, (gt, pred), 1)
    totals = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(totals > 0, np.diag(confusion) / np.maximum(totals, 1), np.nan)
    acc = float(np.trace(confusion) / confusion.sum()) if confusion.sum() else 0.0
    return RecognitionReport(acc, per_class, confusion)


def events_from_labels(labels, background: int | None = None) -> list[DetectionEvent]:
    """Maximal runs of equal non-background labels as events (score 1)."""
    labels = np.asarray(labels, dtype=np.int64)
    events = []
    start = 0
    for t in range(1, len(labels) + 1):
        if t == len(labels) or labels[t] != labels[start]:
            if labels[start] != background:
                events.append(DetectionEvent(int(labels[start]), start, t - 1, 1.0))
            start = t
    return events


def match_events(events: Sequence[DetectionEvent], gt_events: Sequence[DetectionEvent]
                 ) -> list[tuple[int, int]]:
    """Greedy overlap matching; each predicted event is used at most once.

    Ground-truth events are visited in order and take the unused same-label
    prediction with the largest frame overlap (earliest on ties).
    """
    used = set()
    pairs = []
    for gi, g in enumerate(gt_events):
        best, best_ov = None, 0
        for pi, p in enumerate(events):
            if pi in used or p.label != g.label:
                continue
            ov = min(p.end_frame, g.end_frame) - max(p.start_frame, g.start_frame) + 1
            if ov > best_ov:
                best, best_ov = pi, ov
        if best is not None:
            used.add(best)
            pairs.append((gi, best))
    return pairs


def frame_f1(pred, gt, n_labels: int, background: int | None = None) -> tuple[np.ndarray, float]:
    """Per-class frame F1 and their mean over non-background classes present."""
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    f1 = np.zeros(n_labels)
    present = []
    for c in range(n_labels):
        tp = int(np.sum((pred == c) & (gt == c)))
        n_pred, n_gt = int(np.sum(pred == c)), int(np.sum(gt == c))
        if n_pred + n_gt:
            f1[c] = 2 * tp / (n_pred + n_gt)
            if c != background:
                present.append(c)
    overall = float(np.mean(f1[present])) if present else 0.0
    return f1, overall


def detection_metrics(pred_frames, gt_frames, events: Sequence[DetectionEvent],
                      gt_events: Sequence[DetectionEvent] | None, n_labels: int,
                      background: int | None = None, tol_ratio: float = 0.25) -> DetectionReport:
    pred_frames = np.asarray(pred_frames, dtype=np.int64)
    gt_frames = np.asarray(gt_frames, dtype=np.int64)
    if pred_frames.shape != gt_frames.shape:
        raise ValueError(f"length mismatch: {len(pred_frames)} predicted vs {len(gt_frames)} true frames")
    if gt_events is None:
        gt_events = events_from_labels(gt_frames, background)
    f1, overall = frame_f1(pred_frames, gt_frames, n_labels, background)
    pairs = match_events(events, gt_events)
    sl = el = 0
    for gi, pi in pairs:
        g, p = gt_events[gi], events[pi]
        tol = tol_ratio * (g.end_frame - g.start_frame + 1)
        sl += abs(p.start_frame - g.start_frame) <= tol
        el += abs(p.end_frame - g.end_frame) <= tol
    n = len(gt_events)
    return DetectionReport(f1, overall, sl / n if n else 0.0, el / n if n else 0.0, len(pairs), n)
