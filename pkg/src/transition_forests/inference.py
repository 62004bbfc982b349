"""Per-frame posteriors, sequence recognition and the online detector."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .forest import TransitionForest


@dataclass(frozen=True)
class FramePosterior:
    probs: np.ndarray
    argmax_label: int
    time_index: int


@dataclass(frozen=True)
class _Record:
    leaves: np.ndarray
    label: int
    probs: np.ndarray


class PredictionContext:
    """The last ``k`` frame records of one stream (newest last)."""

    def __init__(self, k: int):
        self.k = k
        self.records: deque[_Record] = deque(maxlen=max(k, 1))
        self.t = 0

    def previous(self, d: int) -> _Record | None:
        if self.k == 0 or d > len(self.records):
            return None
        return self.records[-d]

    def push(self, rec: _Record) -> None:
        if self.k > 0:
            self.records.append(rec)
        self.t += 1

    def reset(self) -> None:
        self.records.clear()
        self.t = 0


def _argmax(p: np.ndarray) -> int:
    # np.argmax returns the first maximum: lowest label id on ties
    return int(np.argmax(p))


def transition_probability(f: TransitionForest, d: int, cur_leaves: np.ndarray,
                           prev_leaves: np.ndarray, prev_label=None, prev_probs=None) -> np.ndarray:
    """Mean over the trees trained for distance ``d`` of their transition row.

    Pass ``prev_label`` to condition on a hard previous label, or
    ``prev_probs`` to marginalise the rows over a previous posterior.  A tree
    without a stored leaf pair contributes its current leaf's class
    distribution.
    """
    if not 1 <= d <= f.k:
        raise ValueError(f"temporal distance {d} outside 1..{f.k}")
    if (prev_label is None) == (prev_probs is None):
        raise ValueError("give exactly one of prev_label and prev_probs")
    acc = np.zeros(f.n_labels)
    trees = f.by_d[d]
    for m in trees:
        cur = int(cur_leaves[m])
        mat = f._trans[m].get((int(prev_leaves[m]), cur))
        if mat is None:
            acc += f._class_all[f._leaf_offset[m] + cur]
        elif prev_probs is None:
            acc += mat[prev_label]
        else:
            acc += prev_probs @ mat
    acc /= len(trees)
    return acc / acc.sum()


def predict_frame(f: TransitionForest, x, ctx: PredictionContext, soft: bool = False) -> FramePosterior:
    """Posterior of one frame from the static and transition factors.

    The static factor averages leaf class distributions over all trees; the
    transition factor averages :func:`transition_probability` over every
    distance whose earlier frame is in ``ctx``.  Their product is
    renormalised.  ``ctx`` receives this frame's record.
    """
    leaves = f.route(x)
    probs = f._class_all[f._leaf_offset + leaves].mean(axis=0)
    if f.k > 0:
        trans = None
        n = 0
        for d in range(1, f.k + 1):
            rec = ctx.previous(d)
            if rec is None:
                break
            if soft:
                p = transition_probability(f, d, leaves, rec.leaves, prev_probs=rec.probs)
            else:
                p = transition_probability(f, d, leaves, rec.leaves, prev_label=rec.label)
            trans = p if trans is None else trans + p
            n += 1
        if n:
            combined = probs * (trans / n)
            total = combined.sum()
            if total > 0:
                probs = combined
    probs = probs / probs.sum()
    label = _argmax(probs)
    post = FramePosterior(probs, label, ctx.t)
    ctx.push(_Record(leaves, label, probs))
    return post


def predict_sequence(f: TransitionForest, vectors, soft: bool = False) -> list[FramePosterior]:
    ctx = PredictionContext(f.k)
    return [predict_frame(f, x, ctx, soft) for x in np.asarray(vectors, dtype=np.float64)]


def classify_sequence(f: TransitionForest, vectors, soft: bool = False) -> tuple[int, list[FramePosterior]]:
    """Whole-sequence label: argmax of the mean frame posterior."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if len(vectors) == 0:
        raise ValueError("cannot classify an empty sequence")
    posts = predict_sequence(f, vectors, soft)
    mean = np.mean([p.probs for p in posts], axis=0)
    return _argmax(mean), posts


# ---------------------------------------------------------------- detection


@dataclass(frozen=True)
class DetectorParams:
    beta_start: float = 0.79
    beta_end: float = 0.16
    min_event_len: int = 1

    def __post_init__(self):
        if not 0.0 <= self.beta_end <= self.beta_start <= 1.0:
            raise ValueError("need 0 <= beta_end <= beta_start <= 1")
        if self.min_event_len < 1:
            raise ValueError("min_event_len must be >= 1")


@dataclass(frozen=True)
class DetectionEvent:
    label: int
    start_frame: int
    end_frame: int
    mean_score: float


@dataclass
class ScoreDetector:
    """Threshold state machine over a stream of posterior vectors.

    Idle until some non-background score exceeds ``beta_start``; the label is
    then locked and its running mean since the start is tracked until it
    falls below ``beta_end``.
    """

    params: DetectorParams = field(default_factory=DetectorParams)
    background: int | None = None
    label: int | None = None
    start: int = 0
    total: float = 0.0
    count: int = 0
    t: int = 0

    def update(self, probs) -> DetectionEvent | None:
        probs = np.asarray(probs, dtype=np.float64)
        event = None
        t = self.t
        self.t += 1
        if self.label is None:
            scores = probs.copy()
            if self.background is not None:
                scores[self.background] = -np.inf
            lab = _argmax(scores)
            if scores[lab] > self.params.beta_start:
                self.label, self.start, self.total, self.count = lab, t, float(probs[lab]), 1
            return None
        self.total += float(probs[self.label])
        self.count += 1
        mean = self.total / self.count
        if mean < self.params.beta_end:
            event = self._close(t - 1, mean)
        return event

    def _close(self, end: int, mean: float) -> DetectionEvent | None:
        event = None
        if end - self.start + 1 >= self.params.min_event_len:
            event = DetectionEvent(self.label, self.start, end, mean)
        self.label = None
        return event

    def flush(self) -> DetectionEvent | None:
        if self.label is None:
            return None
        return self._close(self.t - 1, self.total / self.count)


def detect_scores(posteriors: Iterable, params: DetectorParams = DetectorParams(),
                  background: int | None = None) -> list[DetectionEvent]:
    """Run the detector over precomputed posterior vectors."""
    det = ScoreDetector(params, background)
    events = [e for e in (det.update(p) for p in posteriors) if e is not None]
    last = det.flush()
    if last is not None:
        events.append(last)
    return events


def detect_online(f: TransitionForest, frames: Iterable, params: DetectorParams = DetectorParams(),
                  background: int | None = None, soft: bool = False
                  ) -> Iterator[tuple[FramePosterior, DetectionEvent | None]]:
    """Stream ``(posterior, event_or_None)`` per input frame.

    An event still open when the stream ends is yielded with a ``None``
    posterior.  ``background`` defaults to the forest's last label when its
    vocabulary ends in ``background``.
    """
    if background is None and f.label_names and f.label_names[-1].lower() == "background":
        background = f.n_labels - 1
    ctx = PredictionContext(f.k)
    det = ScoreDetector(params, background)
    for x in frames:
        post = predict_frame(f, x, ctx, soft)
        yield post, det.update(post.probs)
    last = det.flush()
    if last is not None:
        yield None, last
