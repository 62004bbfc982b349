"""Transition trees: level-wise growth with classification and transition splits.

Random-number protocol (the RF reference in the tests replays it):

* per level, when ``transition_node_prob > 0`` and the tree has a temporal
  distance, one ``rng.random(n)`` call draws the criterion coin of every
  splittable frontier node in node-id order; otherwise nothing is drawn;
* classification nodes, then transition nodes (their initialisation), each
  in node-id order, draw one candidate set via :func:`sample_candidates`;
* every coordinate-descent visit of a transition node draws a fresh set.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .stats import TransitionSetTable, pair_index, pairs_touching, sequence_pairs, weighted_entropy

log = logging.getLogger(__name__)

# objectives closer than this are treated as ties
TIE_TOL = 1e-9


class InvariantViolation(AssertionError):
    """A training invariant that must never fail did fail."""


@dataclass(frozen=True)
class SplitParams:
    """Axis-aligned split; a frame goes left iff ``x[feature_index] - threshold <= 0``."""

    feature_index: int
    threshold: float


@dataclass
class TreeTrainConfig:
    max_depth: int = 8
    min_samples_split: int = 10
    transition_node_prob: float = 0.5
    # None -> ceil(sqrt(D))
    n_candidate_features: int | None = None
    n_candidate_thresholds: int = 10
    coordinate_descent_sweeps: int = 10
    min_transition_support: int = 10
    laplace_alpha: float = 1.0
    # transition rows whose previous label never occurs in the leaf pair use
    # the pair's own current-label marginal ("pair") or the current leaf's
    # class distribution ("leaf")
    row_fallback: str = "pair"
    d: int | None = None

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.d is not None and self.d < 1:
            raise ValueError("d must be >= 1")
        if not 0.0 <= self.transition_node_prob <= 1.0:
            raise ValueError("transition_node_prob must lie in [0, 1]")
        if self.n_candidate_thresholds < 1:
            raise ValueError("n_candidate_thresholds must be >= 1")
        if self.n_candidate_features is not None and self.n_candidate_features < 1:
            raise ValueError("n_candidate_features must be >= 1")
        if self.row_fallback not in ("pair", "leaf"):
            raise ValueError(f"row_fallback must be 'pair' or 'leaf', got {self.row_fallback!r}")

    def features_per_node(self, n_dims: int) -> int:
        if self.n_candidate_features is None:
            return max(1, min(n_dims, math.ceil(math.sqrt(n_dims))))
        return min(n_dims, self.n_candidate_features)


class TransitionTree:
    """Binary tree stored as parallel arrays over its present node ids.

    ``node_ids`` are level-order ids (children of ``i`` are ``2i+1`` and
    ``2i+2``).  ``feature[k] < 0`` marks a leaf whose compact id is
    ``leaf_id[k]``; leaves are numbered in increasing node-id order.
    """

    def __init__(self, node_ids, feature, threshold, n_features: int):
        order = np.argsort(np.asarray(node_ids, dtype=np.int64), kind="stable")
        self.node_ids = np.asarray(node_ids, dtype=np.int64)[order]
        self.feature = np.asarray(feature, dtype=np.int32)[order]
        self.threshold = np.asarray(threshold, dtype=np.float64)[order]
        self.n_features = int(n_features)
        is_leaf = self.feature < 0
        self.leaf_id = np.full(len(self.node_ids), -1, dtype=np.int32)
        self.leaf_id[is_leaf] = np.arange(int(is_leaf.sum()), dtype=np.int32)
        self.threshold[is_leaf] = 0.0
        pos = {int(n): k for k, n in enumerate(self.node_ids)}
        self.left = np.full(len(self.node_ids), -1, dtype=np.int32)
        self.right = np.full(len(self.node_ids), -1, dtype=np.int32)
        for k, n in enumerate(self.node_ids.tolist()):
            if self.feature[k] >= 0:
                try:
                    self.left[k] = pos[2 * n + 1]
                    self.right[k] = pos[2 * n + 2]
                except KeyError:
                    raise ValueError(f"internal node {n} is missing a child") from None
                if self.feature[k] >= self.n_features:
                    raise ValueError(f"node {n} splits on feature {self.feature[k]} >= {self.n_features}")
        if len(self.node_ids) == 0 or self.node_ids[0] != 0:
            raise ValueError("tree has no root")

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def depth(self) -> int:
        return int(math.floor(math.log2(int(self.node_ids[-1]) + 1)))

    def leaf_node_ids(self) -> np.ndarray:
        return self.node_ids[self.feature < 0]

    def structure(self) -> list[tuple[int, int, float]]:
        """``(node_id, feature, threshold)`` triples; leaves carry feature -1."""
        return [(int(n), int(f), float(t)) for n, f, t in
                zip(self.node_ids, self.feature, self.threshold)]

    def route(self, x) -> int:
        """Leaf id reached by a single feature vector."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_features,):
            raise ValueError(f"expected a vector of length {self.n_features}, got shape {x.shape}")
        k = 0
        feature, threshold = self.feature, self.threshold
        while feature[k] >= 0:
            k = self.left[k] if x[feature[k]] <= threshold[k] else self.right[k]
        return int(self.leaf_id[k])

    def route_many(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected shape (n, {self.n_features}), got {X.shape}")
        k = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[k]
            active = f >= 0
            if not active.any():
                break
            fa = np.where(active, f, 0)
            go_right = X[rows, fa] > self.threshold[k]
            nxt = np.where(go_right, self.right[k], self.left[k])
            k = np.where(active, nxt, k)
        return self.leaf_id[k].astype(np.int64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TransitionTree):
            return NotImplemented
        return (self.n_features == other.n_features
                and np.array_equal(self.node_ids, other.node_ids)
                and np.array_equal(self.feature, other.feature)
                and np.array_equal(self.threshold, other.threshold))

    def __repr__(self) -> str:
        return f"TransitionTree(nodes={self.n_nodes}, leaves={self.n_leaves}, D={self.n_features})"


@dataclass
class LeafTables:
    """Leaf class distributions and sparse leaf-pair transition matrices.

    ``trans_dist[(prev_leaf, cur_leaf)][y_prev, y_cur]`` is row stochastic.
    """

    class_dist: np.ndarray
    trans_dist: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    support: dict[tuple[int, int], int] = field(default_factory=dict)


# ---------------------------------------------------------------- candidates


def _sample_candidate_arrays(rng: np.random.Generator, X_node: np.ndarray,
                             cfg: TreeTrainConfig) -> tuple[np.ndarray, np.ndarray]:
    if len(X_node) == 0:
        raise ValueError("cannot sample split candidates for an empty node")
    n_dims = X_node.shape[1]
    n_feat = cfg.features_per_node(n_dims)
    feats = rng.choice(n_dims, size=n_feat, replace=False)
    cols = X_node[:, feats]
    lo, hi = cols.min(axis=0), cols.max(axis=0)
    u = rng.random((n_feat, cfg.n_candidate_thresholds))
    thr = lo[:, None] + (hi - lo)[:, None] * u
    return np.repeat(feats, cfg.n_candidate_thresholds), thr.ravel()


def sample_candidates(rng: np.random.Generator, X_node: np.ndarray,
                      cfg: TreeTrainConfig) -> list[SplitParams]:
    """Random feature/threshold candidates for one node.

    Features are drawn uniformly without replacement; per feature the
    thresholds are uniform between the node's min and max of that feature.
    """
    feats, thr = _sample_candidate_arrays(rng, np.asarray(X_node, dtype=np.float64), cfg)
    return [SplitParams(int(f), float(t)) for f, t in zip(feats, thr)]


def _first_min(values: np.ndarray) -> int:
    best = values.min()
    return int(np.flatnonzero(values <= best + TIE_TOL)[0])


def classification_objectives(X_node: np.ndarray, y_node: np.ndarray, n_labels: int,
                              feats: np.ndarray, thr: np.ndarray) -> np.ndarray:
    """Count-weighted child entropy for every candidate (vectorised)."""
    right = X_node[:, feats] > thr  # (n, C)
    onehot = np.zeros((len(y_node), n_labels))
    onehot[np.arange(len(y_node)), y_node] = 1.0
    right_counts = right.T.astype(np.float64) @ onehot
    left_counts = onehot.sum(axis=0)[None, :] - right_counts
    return weighted_entropy(left_counts) + weighted_entropy(right_counts)


def optimize_classification_node(X_node, y_node, n_labels: int, cfg: TreeTrainConfig,
                                 rng: np.random.Generator) -> tuple[SplitParams, float]:
    """Greedy split minimising the classification objective over a fresh candidate set."""
    X_node = np.asarray(X_node, dtype=np.float64)
    y_node = np.asarray(y_node, dtype=np.int64)
    if len(X_node) < cfg.min_samples_split:
        raise ValueError(f"node has {len(X_node)} samples, below min_samples_split={cfg.min_samples_split}")
    feats, thr = _sample_candidate_arrays(rng, X_node, cfg)
    obj = classification_objectives(X_node, y_node, n_labels, feats, thr)
    k = _first_min(obj)
    return SplitParams(int(feats[k]), float(thr[k])), float(obj[k])


# ---------------------------------------------------------------- growth


@dataclass
class LevelReport:
    level: int
    classification_nodes: list[int]
    transition_nodes: list[int]
    sweeps: int = 0
    accepted_updates: int = 0
    # global transition objective after init and after each accepted update
    objective_trace: list[float] = field(default_factory=list)


class TreeGrower:
    """Grows one tree level by level over a flat frame array.

    ``X`` (N, D), ``y`` (N,) and ``lengths`` describe the training sequences
    laid end to end; transition pairs never cross a sequence boundary.
    """

    def __init__(self, X, y, lengths: Sequence[int], n_labels: int, cfg: TreeTrainConfig,
                 rng: np.random.Generator):
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.int64)
        if len(self.X) == 0:
            raise ValueError("empty training set")
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError("X must be (N, D) and aligned with y")
        if int(np.sum(lengths)) != len(self.X):
            raise ValueError("sequence lengths do not add up to the frame count")
        self.lengths = [int(n) for n in lengths]
        self.n_labels = int(n_labels)
        self.cfg = cfg
        self.rng = rng
        self.node_of = np.zeros(len(self.X), dtype=np.int64)
        self.splits: dict[int, SplitParams] = {}
        self.leaves: list[int] = []
        self.reports: list[LevelReport] = []
        self.transitions = cfg.d is not None and cfg.transition_node_prob > 0
        if cfg.d is not None:
            self.prev_idx, self.cur_idx = sequence_pairs(self.lengths, cfg.d)
        else:
            self.prev_idx = self.cur_idx = np.zeros(0, dtype=np.int64)
        self.zkey = self.y[self.prev_idx] * self.n_labels + self.y[self.cur_idx]
        self._pairs = pair_index(self.prev_idx, self.cur_idx, len(self.X))
        self._local = np.full(len(self.X), -1, dtype=np.int64)

    def frames_of(self, node: int) -> np.ndarray:
        return np.flatnonzero(self.node_of == node)

    def _splittable(self, frames: np.ndarray) -> bool:
        if len(frames) < self.cfg.min_samples_split or len(frames) == 0:
            return False
        labels = self.y[frames]
        return bool((labels != labels[0]).any())

    def grow(self) -> TransitionTree:
        frontier = [0]
        level = 0
        while frontier:
            if level >= self.cfg.max_depth:
                self.leaves.extend(frontier)
                break
            frontier = self.learn_level(frontier, level)
            level += 1
        node_ids = sorted(list(self.splits) + self.leaves)
        feature = [self.splits[n].feature_index if n in self.splits else -1 for n in node_ids]
        threshold = [self.splits[n].threshold if n in self.splits else 0.0 for n in node_ids]
        return TransitionTree(node_ids, feature, threshold, self.X.shape[1])

    def learn_level(self, frontier: list[int], level: int = 0) -> list[int]:
        """Fit splits for every splittable frontier node; returns the next frontier."""
        frontier = sorted(frontier)
        frames = {i: self.frames_of(i) for i in frontier}
        active = [i for i in frontier if self._splittable(frames[i])]
        for i in frontier:
            if i not in active:
                self.leaves.append(i)
        if not active:
            return []
        if self.transitions:
            coins = self.rng.random(len(active))
            trans_nodes = [i for i, c in zip(active, coins) if c < self.cfg.transition_node_prob]
        else:
            trans_nodes = []
        class_nodes = [i for i in active if i not in trans_nodes]
        report = LevelReport(level, class_nodes, trans_nodes)
        self.reports.append(report)

        chosen: dict[int, SplitParams] = {}
        for i in class_nodes + trans_nodes:
            chosen[i], _ = optimize_classification_node(
                self.X[frames[i]], self.y[frames[i]], self.n_labels, self.cfg, self.rng)
        for i in active:
            self._apply(i, frames[i], chosen[i])

        if trans_nodes:
            self._coordinate_descent(trans_nodes, frames, chosen, report)

        nxt = []
        for i in active:
            left, right = 2 * i + 1, 2 * i + 2
            n_right = int((self.node_of[frames[i]] == right).sum())
            if n_right == 0 or n_right == len(frames[i]):
                # all frames on one side: the node is a leaf after all
                self.node_of[frames[i]] = i
                self.leaves.append(i)
            else:
                self.splits[i] = chosen[i]
                nxt.extend([left, right])
        return nxt

    def _apply(self, node: int, frames: np.ndarray, split: SplitParams) -> None:
        go_right = self.X[frames, split.feature_index] > split.threshold
        self.node_of[frames] = np.where(go_right, 2 * node + 2, 2 * node + 1)

    # -- transition criterion

    def _coordinate_descent(self, trans_nodes, frames, chosen, report: LevelReport) -> None:
        table = TransitionSetTable(self.cfg.d, self.n_labels, self.node_of, self.y,
                                   self.prev_idx, self.cur_idx)
        current = table.objective()
        report.objective_trace.append(current)
        for sweep in range(self.cfg.coordinate_descent_sweeps):
            changed = False
            for j in trans_nodes:
                fj = frames[j]
                feats, thr = _sample_candidate_arrays(self.rng, self.X[fj], self.cfg)
                cur_split = chosen[j]
                feats = np.append(feats, cur_split.feature_index)
                thr = np.append(thr, cur_split.threshold)
                values = self.local_objectives(j, fj, feats, thr)
                k = _first_min(values[:-1])
                if values[k] < values[-1] - TIE_TOL:
                    chosen[j] = SplitParams(int(feats[k]), float(thr[k]))
                    self._apply(j, fj, chosen[j])
                    table.move(fj, self.node_of[fj])
                    updated = table.objective()
                    if updated > current + TIE_TOL * max(1.0, abs(current)):
                        raise InvariantViolation(
                            f"transition objective rose from {current} to {updated} at node {j}")
                    current = updated
                    report.objective_trace.append(current)
                    report.accepted_updates += 1
                    changed = True
            report.sweeps = sweep + 1
            if not changed:
                break

    def local_objectives(self, j: int, fj: np.ndarray, feats: np.ndarray,
                         thr: np.ndarray) -> np.ndarray:
        """Local transition objective of node ``j`` for each candidate split.

        Only pairs with an endpoint inside ``j`` are touched; the other end of
        a crossing pair stays in whatever bucket it currently occupies.
        """
        touch = pairs_touching(self._pairs, fj)
        local = self._local
        local[fj] = np.arange(len(fj))
        try:
            lp = local[self.prev_idx[touch]]
            lc = local[self.cur_idx[touch]]
        finally:
            local[fj] = -1
        z = self.zkey[touch]
        within = (lp >= 0) & (lc >= 0)
        out = (lp >= 0) & (lc < 0)
        # group of each pair: within j, out to bucket b, in from bucket b
        gkey = np.where(within, -1,
                        np.where(out, 2 * self.node_of[self.cur_idx[touch]],
                                 2 * self.node_of[self.prev_idx[touch]] + 1))
        _, g = np.unique(gkey, return_inverse=True)
        n_groups = int(g.max()) + 1 if len(g) else 1
        zu, zi = np.unique(z, return_inverse=True)
        n_z = max(1, len(zu))

        n_cand = len(feats)
        side = (self.X[fj][:, feats] > thr).T.astype(np.int64)  # (C, n_j)
        sp = side[:, np.where(lp >= 0, lp, 0)]
        sc = side[:, np.where(lc >= 0, lc, 0)]
        s = np.where(within, 2 * sp + sc, np.where(out, sp, sc))
        idx = ((np.arange(n_cand)[:, None] * n_groups + g) * 4 + s) * n_z + zi
        counts = np.bincount(idx.ravel(), minlength=n_cand * n_groups * 4 * n_z)
        counts = counts.reshape(n_cand, n_groups * 4, n_z)
        return weighted_entropy(counts).sum(axis=1)


def grow_tree(X, y, lengths: Sequence[int], n_labels: int, cfg: TreeTrainConfig,
              rng: np.random.Generator) -> TransitionTree:
    """Grow a transition tree from sequences laid end to end in ``X``/``y``."""
    return TreeGrower(X, y, lengths, n_labels, cfg, rng).grow()


def _smooth(counts: np.ndarray, alpha: float) -> np.ndarray:
    """Additive smoothing along the last axis; all-zero rows become uniform."""
    num = counts + alpha
    den = num.sum(axis=-1, keepdims=True)
    out = np.full(counts.shape, 1.0 / counts.shape[-1])
    np.divide(num, den, out=out, where=den > 0)
    return out


def finalize_leaves(tree: TransitionTree, X, y, lengths: Sequence[int], n_labels: int,
                    cfg: TreeTrainConfig) -> LeafTables:
    """Estimate leaf class distributions and supported leaf-pair transition rows."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    alpha = cfg.laplace_alpha
    leaves = tree.route_many(X)
    L = tree.n_leaves
    counts = np.zeros((L, n_labels))
    np.add.at(counts, (leaves, y), 1.0)
    class_dist = _smooth(counts, alpha)
    tables = LeafTables(class_dist)
    if cfg.d is None:
        return tables
    prev, cur = sequence_pairs(list(lengths), cfg.d)
    if len(prev) == 0:
        return tables
    key = np.stack([leaves[prev], leaves[cur], y[prev] * n_labels + y[cur]], axis=1)
    uniq, cnt = np.unique(key, axis=0, return_counts=True)
    raw: dict[tuple[int, int], np.ndarray] = {}
    for (a, b, z), c in zip(uniq.tolist(), cnt.tolist()):
        raw.setdefault((a, b), np.zeros(n_labels * n_labels))[z] += c
    for (a, b), flat in raw.items():
        support = int(flat.sum())
        if support < cfg.min_transition_support:
            continue
        m = flat.reshape(n_labels, n_labels)
        row_tot = m.sum(axis=1, keepdims=True)
        rows = _smooth(m, alpha)
        unseen = row_tot[:, 0] == 0
        if unseen.any():
            if cfg.row_fallback == "pair":
                marg = m.sum(axis=0)
                rows[unseen] = _smooth(marg[None], alpha)[0]
            else:
                rows[unseen] = class_dist[b]
        tables.trans_dist[(a, b)] = rows
        tables.support[(a, b)] = support
    return tables
