"""Transition forest ensembles: training, d-partitioning and the ``.tfor`` file format.

``.tfor`` layout (little endian)::

    b"TFOR" | u16 version | u16 reserved | u32 k | u32 n_trees | u32 D | u32 n_labels
    n_labels x (u32 len, utf-8 label name) | u32 len, utf-8 JSON config echo
    per tree:
        u32 d (0 = none) | u32 n_nodes | n_nodes x (u64 id, u8 kind, i32 feature, f64 threshold)
        u32 n_leaves | n_leaves x n_labels f64 class table
        u32 n_entries | n_entries x (u32 prev_leaf, u32 cur_leaf, u64 support,
                                    n_labels^2 f64 row-major matrix)
    u32 CRC-32 of everything above
"""
from __future__ import annotations

import json
import logging
import struct
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import FeatureSequence, FeatureSpec
from .skeleton_data import Dataset
from .tree import LeafTables, TransitionTree, TreeGrower, TreeTrainConfig, finalize_leaves

log = logging.getLogger(__name__)

MAGIC = b"TFOR"
FORMAT_VERSION = 1
_NODE_DTYPE = np.dtype([("id", "<u8"), ("kind", "u1"), ("feature", "<i4"), ("threshold", "<f8")])
_KIND_LEAF, _KIND_SPLIT = 0, 1


class ModelFormatError(ValueError):
    """A model file is corrupt, truncated or from an unsupported version."""


@dataclass
class ForestConfig:
    num_trees: int = 20
    temporal_order: int = 2
    tree_config: TreeTrainConfig = field(default_factory=TreeTrainConfig)
    seed: int = 0
    feature_spec: FeatureSpec = field(default_factory=FeatureSpec)
    # resample whole sequences with replacement per tree
    bootstrap: bool = True

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")
        if self.temporal_order < 0:
            raise ValueError("temporal_order must be >= 0")
        if self.temporal_order >= 1 and self.num_trees < self.temporal_order:
            raise ValueError(f"num_trees={self.num_trees} cannot cover temporal order k={self.temporal_order}")

    def to_dict(self) -> dict:
        tc = asdict(self.tree_config)
        tc.pop("d")
        return {"num_trees": self.num_trees, "temporal_order": self.temporal_order,
                "tree_config": tc, "seed": self.seed, "bootstrap": self.bootstrap,
                "feature_spec": self.feature_spec.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ForestConfig":
        return cls(int(d["num_trees"]), int(d["temporal_order"]), TreeTrainConfig(**d["tree_config"]),
                   int(d["seed"]), FeatureSpec.from_dict(d["feature_spec"]), bool(d["bootstrap"]))


@dataclass
class ForestTree:
    tree: TransitionTree
    tables: LeafTables
    d: int | None


class TransitionForest:
    """Immutable ensemble; trees are partitioned by their temporal distance."""

    def __init__(self, trees: list[ForestTree], label_names: Sequence[str], feature_dim: int,
                 config: ForestConfig):
        self.trees = list(trees)
        self.label_names = list(label_names)
        self.feature_dim = int(feature_dim)
        self.config = config
        self.k = config.temporal_order
        for t in self.trees:
            if self.k == 0 and t.d is not None:
                raise ValueError("a k=0 forest cannot hold transition trees")
            if self.k >= 1 and (t.d is None or not 1 <= t.d <= self.k):
                raise ValueError(f"tree distance {t.d} outside 1..{self.k}")
        self.by_d = {d: [m for m, t in enumerate(self.trees) if t.d == d] for d in range(1, self.k + 1)}
        if any(not v for v in self.by_d.values()):
            raise ValueError("every temporal distance needs at least one tree")
        self._pack()

    @property
    def n_labels(self) -> int:
        return len(self.label_names)

    def _pack(self) -> None:
        # padded per-tree node arrays for routing all trees at once
        M = len(self.trees)
        width = max(t.tree.n_nodes for t in self.trees)
        self._width = width
        self._feat = np.full((M, width), -1, dtype=np.int64)
        self._thr = np.zeros((M, width))
        self._left = np.zeros((M, width), dtype=np.int64)
        self._right = np.zeros((M, width), dtype=np.int64)
        self._leaf = np.zeros((M, width), dtype=np.int64)
        offsets = []
        off = 0
        for m, t in enumerate(self.trees):
            tr, n = t.tree, t.tree.n_nodes
            self._feat[m, :n] = tr.feature
            self._thr[m, :n] = tr.threshold
            self._left[m, :n] = np.maximum(tr.left, 0) + m * width
            self._right[m, :n] = np.maximum(tr.right, 0) + m * width
            self._leaf[m, :n] = tr.leaf_id
            offsets.append(off)
            off += tr.n_leaves
        self._feat, self._thr = self._feat.ravel(), self._thr.ravel()
        self._left, self._right, self._leaf = self._left.ravel(), self._right.ravel(), self._leaf.ravel()
        self._roots = np.arange(M, dtype=np.int64) * width
        self._leaf_offset = np.asarray(offsets, dtype=np.int64)
        self._class_all = np.concatenate([t.tables.class_dist for t in self.trees])
        self._max_depth = max(t.tree.depth for t in self.trees)
        self._trans = [{(a, b): m for (a, b), m in t.tables.trans_dist.items()} for t in self.trees]

    def route(self, x) -> np.ndarray:
        """Leaf id reached in every tree by one feature vector."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.feature_dim,):
            raise ValueError(f"expected a vector of length {self.feature_dim}, got shape {x.shape}")
        k = self._roots
        feat, thr = self._feat, self._thr
        for _ in range(self._max_depth):
            f = feat[k]
            active = f >= 0
            right = x[np.where(active, f, 0)] > thr[k]
            k = np.where(active, np.where(right, self._right[k], self._left[k]), k)
        return self._leaf[k]

    def route_many(self, X) -> np.ndarray:
        """(N, n_trees) leaf ids."""
        X = np.asarray(X, dtype=np.float64)
        return np.stack([t.tree.route_many(X) for t in self.trees], axis=1)

    def class_distributions(self, leaves: np.ndarray) -> np.ndarray:
        """(n_trees, n_labels) leaf class distributions for one frame's leaves."""
        return self._class_all[self._leaf_offset + leaves]

    def transition_row(self, m: int, prev_leaf: int, cur_leaf: int):
        """Stored (n_labels, n_labels) matrix of tree ``m`` or ``None``."""
        return self._trans[m].get((prev_leaf, cur_leaf))


def assign_distances(num_trees: int, k: int, rng: np.random.Generator) -> list[int | None]:
    """Even round-robin over 1..k, shuffled; ``None`` for every tree when k = 0."""
    if k == 0:
        return [None] * num_trees
    ds = np.arange(num_trees) % k + 1
    return [int(d) for d in rng.permutation(ds)]


def tree_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _train_tree(args) -> ForestTree:
    index, seqs, n_labels, cfg, seed, bootstrap = args
    rng = tree_rng(seed, index)
    if bootstrap:
        pick = rng.integers(0, len(seqs), size=len(seqs))
    else:
        pick = np.arange(len(seqs))
    X = np.concatenate([seqs[i][0] for i in pick])
    y = np.concatenate([seqs[i][1] for i in pick])
    lengths = [len(seqs[i][1]) for i in pick]
    grower = TreeGrower(X, y, lengths, n_labels, cfg, rng)
    tree = grower.grow()
    tables = finalize_leaves(tree, X, y, lengths, n_labels, cfg)
    return ForestTree(tree, tables, cfg.d)


def train_forest_features(train: Sequence[FeatureSequence], label_names: Sequence[str],
                          cfg: ForestConfig, threads: int = 1) -> TransitionForest:
    """Train on already extracted feature sequences."""
    if not train:
        raise ValueError("empty training set")
    dims = {fs.dim for fs in train}
    if len(dims) != 1:
        raise ValueError(f"feature sequences disagree on dimension: {sorted(dims)}")
    n_labels = len(label_names)
    master = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    distances = assign_distances(cfg.num_trees, cfg.temporal_order, master)
    seqs = [(fs.vectors, fs.labels) for fs in train]
    jobs = []
    for m, d in enumerate(distances):
        tc = TreeTrainConfig(**{**asdict(cfg.tree_config), "d": d})
        jobs.append((m, seqs, n_labels, tc, cfg.seed, cfg.bootstrap))
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(_train_tree, jobs))
    else:
        trees = [_train_tree(j) for j in jobs]
    log.info("trained %d trees (k=%d)", len(trees), cfg.temporal_order)
    return TransitionForest(trees, label_names, dims.pop(), cfg)


def train_forest(dataset: Dataset, cfg: ForestConfig, threads: int = 1) -> TransitionForest:
    """Extract features per ``cfg.feature_spec`` and train the ensemble."""
    if not dataset.sequences:
        raise ValueError("empty dataset")
    train = cfg.feature_spec.extract_dataset(dataset)
    return train_forest_features(train, dataset.label_names, cfg, threads)


# ---------------------------------------------------------------- serialization


def forest_to_bytes(f: TransitionForest) -> bytes:
    Y = f.n_labels
    out = bytearray()
    out += MAGIC + struct.pack("<HHIIII", FORMAT_VERSION, 0, f.k, len(f.trees), f.feature_dim, Y)
    for name in f.label_names:
        b = name.encode("utf-8")
        out += struct.pack("<I", len(b)) + b
    cfg = json.dumps(f.config.to_dict(), sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(cfg)) + cfg
    for t in f.trees:
        tr = t.tree
        nodes = np.zeros(tr.n_nodes, dtype=_NODE_DTYPE)
        nodes["id"] = tr.node_ids
        nodes["kind"] = np.where(tr.feature >= 0, _KIND_SPLIT, _KIND_LEAF)
        nodes["feature"] = tr.feature
        nodes["threshold"] = tr.threshold
        out += struct.pack("<II", t.d or 0, tr.n_nodes) + nodes.tobytes()
        cls = np.ascontiguousarray(t.tables.class_dist, dtype="<f8")
        out += struct.pack("<I", len(cls)) + cls.tobytes()
        keys = sorted(t.tables.trans_dist)
        out += struct.pack("<I", len(keys))
        for a, b in keys:
            out += struct.pack("<IIQ", a, b, t.tables.support[(a, b)])
            out += np.ascontiguousarray(t.tables.trans_dist[(a, b)], dtype="<f8").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def save_forest(f: TransitionForest, path) -> None:
    Path(path).write_bytes(forest_to_bytes(f))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ModelFormatError("truncated model file")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count: int) -> np.ndarray:
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype, count=count).copy()


def forest_from_bytes(buf: bytes) -> TransitionForest:
    if len(buf) < 4 + 20 + 4:
        raise ModelFormatError("truncated model file")
    if buf[:4] != MAGIC:
        raise ModelFormatError("not a transition forest model (bad magic)")
    version = struct.unpack_from("<H", buf, 4)[0]
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {version} (expected {FORMAT_VERSION})")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise ModelFormatError("checksum mismatch: model file is corrupt or truncated")
    r = _Reader(body)
    r.take(4)
    _, _, k, n_trees, D, Y = r.unpack("<HHIIII")
    names = [r.take(r.unpack("<I")[0]).decode("utf-8") for _ in range(Y)]
    cfg = ForestConfig.from_dict(json.loads(r.take(r.unpack("<I")[0]).decode("utf-8")))
    trees = []
    for _ in range(n_trees):
        d, n_nodes = r.unpack("<II")
        nodes = r.array(_NODE_DTYPE, n_nodes)
        tree = TransitionTree(nodes["id"].astype(np.int64), nodes["feature"], nodes["threshold"], D)
        (n_leaves,) = r.unpack("<I")
        cls = r.array("<f8", n_leaves * Y).reshape(n_leaves, Y)
        tables = LeafTables(cls)
        (n_entries,) = r.unpack("<I")
        for _ in range(n_entries):
            a, b, support = r.unpack("<IIQ")
            tables.trans_dist[(a, b)] = r.array("<f8", Y * Y).reshape(Y, Y)
            tables.support[(a, b)] = support
        trees.append(ForestTree(tree, tables, d or None))
    if r.pos != len(body):
        raise ModelFormatError("trailing bytes after last tree")
    return TransitionForest(trees, names, D, cfg)


def load_forest(path) -> TransitionForest:
    p = Path(path)
    if not str(path) or not p.is_file():
        raise FileNotFoundError(f"model file not found: {path!r}")
    return forest_from_bytes(p.read_bytes())
