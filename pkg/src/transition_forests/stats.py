"""Entropy objectives and transition-set bookkeeping.

All entropies are in bits and all objectives are count weighted, i.e. a set
``T`` contributes ``|T| * H(T)``.  Label transitions ``(prev, cur)`` are
stored under the composite key ``prev * n_labels + cur``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np


def xlog2x(counts: np.ndarray) -> np.ndarray:
    """Elementwise ``c * log2(c)`` for counts (0 or >= 1), with ``0 log 0 = 0``."""
    c = np.asarray(counts, dtype=np.float64)
    return c * np.log2(np.maximum(c, 1.0))


def weighted_entropy(counts: np.ndarray, axis: int = -1) -> np.ndarray:
    """``n * H`` of each histogram laid out along ``axis``.

    Uses ``n*H = n log n - sum c log c`` so that only counts are touched.
    """
    c = np.asarray(counts, dtype=np.float64)
    n = c.sum(axis=axis)
    return xlog2x(n) - xlog2x(c).sum(axis=axis)


@dataclass(frozen=True)
class LabelHistogram:
    counts: np.ndarray

    @classmethod
    def from_labels(cls, labels: Iterable[int], n_labels: int) -> "LabelHistogram":
        return cls(np.bincount(np.asarray(list(labels), dtype=np.int64), minlength=n_labels))

    @property
    def total(self) -> int:
        return int(np.sum(self.counts))


@dataclass(frozen=True)
class TransitionHistogram:
    """Counts of label transitions, flat over ``prev * n_labels + cur``."""

    counts: np.ndarray
    n_labels: int

    @classmethod
    def empty(cls, n_labels: int) -> "TransitionHistogram":
        return cls(np.zeros(n_labels * n_labels, dtype=np.int64), n_labels)

    @property
    def total(self) -> int:
        return int(np.sum(self.counts))

    def matrix(self) -> np.ndarray:
        return self.counts.reshape(self.n_labels, self.n_labels)

    def get(self, prev: int, cur: int) -> int:
        return int(self.counts[prev * self.n_labels + cur])


def _as_counts(h) -> np.ndarray:
    if isinstance(h, (LabelHistogram, TransitionHistogram)):
        return np.asarray(h.counts)
    if isinstance(h, Mapping):
        return np.fromiter(h.values(), dtype=np.float64, count=len(h))
    return np.asarray(h)


def shannon_entropy(h) -> float:
    """Shannon entropy in bits of a histogram; 0 for an empty one.

    Accepts a :class:`LabelHistogram`, :class:`TransitionHistogram`, a plain
    mapping of counts or an array of counts.
    """
    c = _as_counts(h).astype(np.float64).ravel()
    n = c.sum()
    if n <= 0:
        return 0.0
    p = c[c > 0] / n
    return float(-(p * np.log2(p)).sum())


def classification_objective(left, right) -> float:
    """Count-weighted child entropy ``|L| H(L) + |R| H(R)``."""
    total = 0.0
    for h in (left, right):
        c = _as_counts(h)
        total += float(np.sum(c)) * shannon_entropy(c)
    return total


class TransitionSetTable:
    """Transition sets between node pairs for one temporal distance ``d``.

    ``entries[(src, dst)]`` holds the label-transition histogram of all
    in-sequence frame pairs ``(t-d, t)`` whose earlier frame sits in node
    ``src`` and later frame in node ``dst``.  The table keeps the flat frame
    assignment so that :meth:`move` can update it touching only the pairs
    with an endpoint among the moved frames.
    """

    def __init__(self, d: int, n_labels: int, node: np.ndarray, labels: np.ndarray,
                 prev_idx: np.ndarray, cur_idx: np.ndarray):
        self.d = d
        self.n_labels = n_labels
        self.node = np.array(node, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.prev_idx = np.asarray(prev_idx, dtype=np.int64)
        self.cur_idx = np.asarray(cur_idx, dtype=np.int64)
        self.zkey = self.labels[self.prev_idx] * n_labels + self.labels[self.cur_idx]
        # frame -> pairs it takes part in, for incremental moves
        self._index = pair_index(self.prev_idx, self.cur_idx, len(self.node))
        self.entries: dict[tuple[int, int], np.ndarray] = {}
        self._add_pairs(np.arange(len(self.prev_idx)), +1)

    def _add_pairs(self, pair_ids: np.ndarray, sign: int) -> None:
        if len(pair_ids) == 0:
            return
        src = self.node[self.prev_idx[pair_ids]]
        dst = self.node[self.cur_idx[pair_ids]]
        zz = self.n_labels * self.n_labels
        nb = int(max(src.max(), dst.max())) + 1
        key = (src * nb + dst) * zz + self.zkey[pair_ids]
        uniq, counts = np.unique(key, return_counts=True)
        st, zks = np.divmod(uniq, zz)
        ss, ts = np.divmod(st, nb)
        for s, t, zk, c in zip(ss.tolist(), ts.tolist(), zks.tolist(), counts.tolist()):
            hist = self.entries.get((s, t))
            if hist is None:
                hist = np.zeros(zz, dtype=np.int64)
                self.entries[(s, t)] = hist
            hist[zk] += sign * c
            if sign < 0 and not hist.any():
                del self.entries[(s, t)]

    def move(self, frames, new_nodes) -> None:
        """Reassign ``frames`` to ``new_nodes``, updating only affected pairs."""
        frames = np.atleast_1d(np.asarray(frames, dtype=np.int64))
        new_nodes = np.broadcast_to(np.asarray(new_nodes, dtype=np.int64), frames.shape)
        pairs = pairs_touching(self._index, frames)
        self._add_pairs(pairs, -1)
        self.node[frames] = new_nodes
        self._add_pairs(pairs, +1)

    def histogram(self, src: int, dst: int) -> TransitionHistogram:
        counts = self.entries.get((src, dst))
        if counts is None:
            return TransitionHistogram.empty(self.n_labels)
        return TransitionHistogram(counts.copy(), self.n_labels)

    def totals(self) -> dict[tuple[int, int], int]:
        return {k: int(v.sum()) for k, v in self.entries.items()}

    def objective(self) -> float:
        """Sum of ``|T| H(T)`` over every stored node pair."""
        if not self.entries:
            return 0.0
        return float(weighted_entropy(np.stack(list(self.entries.values()))).sum())


def _csr_offsets(idx: np.ndarray, n: int) -> np.ndarray:
    counts = np.bincount(idx, minlength=n)
    return np.concatenate([[0], np.cumsum(counts)])


def pair_index(prev_idx: np.ndarray, cur_idx: np.ndarray, n_frames: int):
    """CSR lookups frame -> pairs it starts and frame -> pairs it ends."""
    out = (_csr_offsets(prev_idx, n_frames), np.argsort(prev_idx, kind="stable"))
    inc = (_csr_offsets(cur_idx, n_frames), np.argsort(cur_idx, kind="stable"))
    return out, inc


def pairs_touching(index, frames: np.ndarray) -> np.ndarray:
    """Sorted ids of pairs with at least one endpoint in ``frames``."""
    (os_, oo), (is_, io) = index
    return np.unique(np.concatenate([_gather_ranges(oo, os_, frames), _gather_ranges(io, is_, frames)]))


def _gather_ranges(order: np.ndarray, start: np.ndarray, frames: np.ndarray) -> np.ndarray:
    lo = start[frames]
    n = start[frames + 1] - lo
    total = int(n.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    # position k within its run -> lo[run] + k
    run = np.repeat(np.arange(len(frames)), n)
    k = np.arange(total) - np.repeat(np.cumsum(n) - n, n)
    return order[lo[run] + k]


def sequence_pairs(lengths: Sequence[int], d: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices ``(t-d, t)`` of all d-distant pairs inside each sequence."""
    if d < 1:
        raise ValueError(f"temporal distance must be >= 1, got {d}")
    prev, cur = [], []
    offset = 0
    for n in lengths:
        if n > d:
            t = np.arange(offset + d, offset + n)
            prev.append(t - d)
            cur.append(t)
        offset += n
    if not prev:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy()
    return np.concatenate(prev), np.concatenate(cur)


def build_transition_sets(assignment: Sequence[Sequence[int]], labels: Sequence[Sequence[int]],
                          d: int, n_labels: int,
                          tracked_nodes: Iterable[int] | None = None) -> TransitionSetTable:
    """Group all d-distant frame pairs of each sequence by (node of t-d, node of t).

    ``assignment[s][t]`` is the node reached by frame ``t`` of sequence ``s``
    and ``labels[s][t]`` its label.  Pairs never cross sequence boundaries.
    """
    if d < 1:
        raise ValueError(f"temporal distance must be >= 1, got {d}")
    node = np.concatenate([np.asarray(a, dtype=np.int64).ravel() for a in assignment]) \
        if len(assignment) else np.zeros(0, dtype=np.int64)
    lab = np.concatenate([np.asarray(a, dtype=np.int64).ravel() for a in labels]) \
        if len(labels) else np.zeros(0, dtype=np.int64)
    if len(node) != len(lab):
        raise ValueError("assignment and labels differ in length")
    if tracked_nodes is not None:
        tracked = np.fromiter(tracked_nodes, dtype=np.int64)
        bad = ~np.isin(node, tracked)
        if bad.any():
            raise ValueError(f"frame {int(np.flatnonzero(bad)[0])} is not mapped to a tracked node")
    prev, cur = sequence_pairs([len(a) for a in assignment], d)
    return TransitionSetTable(d, n_labels, node, lab, prev, cur)


def _entry_term(table: TransitionSetTable, src: int, dst: int) -> float:
    counts = table.entries.get((src, dst))
    if counts is None:
        return 0.0
    return float(counts.sum()) * shannon_entropy(counts)


def transition_objective_Et(table: TransitionSetTable, parent: int) -> float:
    """Sum of ``|T| H(T)`` over the four transition sets between ``parent``'s children."""
    kids = (2 * parent + 1, 2 * parent + 2)
    return sum(_entry_term(table, a, b) for a in kids for b in kids)


def local_transition_objective(table: TransitionSetTable, j: int, peers: Iterable[int],
                               bucket_peers: Iterable[int] = ()) -> float:
    """Local transition objective of node ``j`` with all other splits fixed.

    Three groups of ``|T| H(T)`` terms are added, each in a fixed order: the
    sets between ``j``'s children, the sets from ``j``'s children to every
    peer's children, and the sets from every peer's children to ``j``'s
    children.  ``bucket_peers`` are stopped nodes tracked as a single bucket
    under their own id instead of through two children.
    """
    peers = list(peers)
    bucket_peers = list(bucket_peers)
    if j in peers or j in bucket_peers:
        raise ValueError(f"node {j} cannot be its own peer")
    jk = (2 * j + 1, 2 * j + 2)
    groups = [(2 * i + 1, 2 * i + 2) for i in peers] + [(i,) for i in bucket_peers]
    own = transition_objective_Et(table, j)
    out = sum(_entry_term(table, m, n) for ik in groups for m in jk for n in ik)
    inc = sum(_entry_term(table, n, m) for ik in groups for m in jk for n in ik)
    return own + out + inc
