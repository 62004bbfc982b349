"""Per-frame feature representations of skeleton sequences."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .skeleton_data import Dataset, Sequence, SkeletonSpec, normalize_sequence

REPRESENTATIONS = ("jp", "rjp", "mp", "mp-rjp")


@dataclass(frozen=True)
class FeatureFrame:
    vector: np.ndarray
    label: int
    time_index: int


@dataclass(frozen=True)
class FeatureSequence:
    """Feature vectors (T, D) with one label per frame."""

    id: str
    vectors: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", labels)
        if vectors.ndim != 2 or len(vectors) != len(labels):
            raise ValueError(f"feature sequence {self.id!r}: vectors must be (T, D) aligned with labels")
        if not np.isfinite(vectors).all():
            raise ValueError(f"feature sequence {self.id!r}: non-finite feature")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def frames(self) -> Iterator[FeatureFrame]:
        for t in range(len(self)):
            yield FeatureFrame(self.vectors[t], int(self.labels[t]), t)


def extract_jp(seq: Sequence) -> FeatureSequence:
    """Flattened joint coordinates, D = 3J."""
    return FeatureSequence(seq.id, seq.joints.reshape(len(seq), -1), seq.labels)


def pairwise_distances(joints: np.ndarray) -> np.ndarray:
    """(T, J, 3) -> (T, J(J-1)/2) distances over pairs i < j in lexicographic order."""
    i, j = np.triu_indices(joints.shape[1], k=1)
    return np.linalg.norm(joints[:, i] - joints[:, j], axis=-1)


def extract_rjp(seq: Sequence) -> FeatureSequence:
    """Distances between all unordered joint pairs."""
    return FeatureSequence(seq.id, pairwise_distances(seq.joints), seq.labels)


def moving_pose(p: np.ndarray, alpha: float = 0.75, beta: float = 0.6) -> np.ndarray:
    """Append velocity and acceleration blocks using clamped t±1, t±2 neighbours."""
    T = len(p)
    t = np.arange(T)
    at = lambda off: p[np.clip(t + off, 0, T - 1)]
    vel = alpha * (at(1) - at(-1))
    acc = beta * (at(2) + at(-2) - 2.0 * p)
    return np.concatenate([p, vel, acc], axis=1)


def extract_mp(seq: Sequence, base: str = "jp", alpha: float = 0.75, beta: float = 0.6) -> FeatureSequence:
    if base == "jp":
        p = extract_jp(seq).vectors
    elif base == "rjp":
        p = extract_rjp(seq).vectors
    else:
        raise ValueError(f"unknown base representation {base!r}")
    return FeatureSequence(seq.id, moving_pose(p, alpha, beta), seq.labels)


def extract_window(fs: FeatureSequence, w: int) -> FeatureSequence:
    """Stack vectors t-w+1 .. t (clamped at the start), oldest first."""
    if w < 1:
        raise ValueError(f"window must be >= 1, got {w}")
    T = len(fs)
    t = np.arange(T)
    blocks = [fs.vectors[np.clip(t - lag, 0, None)] for lag in range(w - 1, -1, -1)]
    return FeatureSequence(fs.id, np.concatenate(blocks, axis=1), fs.labels)


@dataclass(frozen=True)
class FeatureSpec:
    """Representation plus preprocessing, stored alongside a trained model."""

    representation: str = "jp"
    window: int = 1
    normalize: SkeletonSpec | None = None
    mp_alpha: float = 0.75
    mp_beta: float = 0.6

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}; choose from {REPRESENTATIONS}")
        if self.window < 1:
            raise ValueError("window must be >= 1")

    def to_dict(self) -> dict:
        norm = None
        if self.normalize is not None:
            n = self.normalize
            norm = [n.root, n.left_hip, n.right_hip, n.vertical_axis]
        return {"representation": self.representation, "window": self.window, "normalize": norm,
                "mp_alpha": self.mp_alpha, "mp_beta": self.mp_beta}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        norm = d.get("normalize")
        return cls(d["representation"], int(d["window"]),
                   SkeletonSpec(*norm) if norm is not None else None,
                   float(d.get("mp_alpha", 0.75)), float(d.get("mp_beta", 0.6)))

    def dim(self, joint_count: int) -> int:
        base = {"jp": 3 * joint_count, "rjp": joint_count * (joint_count - 1) // 2,
                "mp": 9 * joint_count, "mp-rjp": 3 * (joint_count * (joint_count - 1) // 2)}
        return base[self.representation] * self.window

    def extract(self, seq: Sequence) -> FeatureSequence:
        if self.normalize is not None:
            seq = normalize_sequence(seq, self.normalize)
        if self.representation == "jp":
            fs = extract_jp(seq)
        elif self.representation == "rjp":
            fs = extract_rjp(seq)
        elif self.representation == "mp":
            fs = extract_mp(seq, "jp", self.mp_alpha, self.mp_beta)
        else:
            fs = extract_mp(seq, "rjp", self.mp_alpha, self.mp_beta)
        return extract_window(fs, self.window) if self.window > 1 else fs

    def extract_dataset(self, ds: Dataset) -> list[FeatureSequence]:
        return [self.extract(s) for s in ds.sequences]
