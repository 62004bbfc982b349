"""Labelled skeleton sequences: on-disk format, normalisation and synthesis.

Dataset layout (all text, locale independent decimals)::

    manifest.txt   one line per sequence: <relative_path>,<sequence_label_or_->
    labels.txt     one label name per line, line number = label id
    <seq>.csv      header ``J=<joint_count>`` then one frame per line:
                   <frame_label_id>,<j0x>,<j0y>,<j0z>,...,<j{J-1}z>

A vocabulary whose last name is ``background`` marks a detection dataset;
that last id is then the background label.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

log = logging.getLogger(__name__)

BACKGROUND_NAME = "background"
LABELS_FILE = "labels.txt"


class DatasetError(ValueError):
    """Malformed dataset file; the message carries file and line."""


class DegenerateSkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class SkeletonFrame:
    """One pose: ``joints`` is a (J, 3) array of x, y, z rows."""

    joints: np.ndarray
    label: int
    time_index: int


@dataclass(frozen=True)
class Sequence:
    """Frames of one recording stored as arrays.

    ``joints`` has shape (T, J, 3) and ``labels`` shape (T,).
    """

    id: str
    joints: np.ndarray
    labels: np.ndarray
    sequence_label: int | None = None

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "labels", labels)
        if joints.ndim != 3 or joints.shape[2] != 3 or len(joints) == 0:
            raise ValueError(f"sequence {self.id!r}: joints must be a non-empty (T, J, 3) array")
        if labels.shape != (len(joints),):
            raise ValueError(f"sequence {self.id!r}: one label per frame required")
        if not np.isfinite(joints).all():
            raise ValueError(f"sequence {self.id!r}: non-finite coordinate")
        if self.sequence_label is not None and (labels != self.sequence_label).any():
            raise ValueError(f"sequence {self.id!r}: frame label differs from sequence label")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def joint_count(self) -> int:
        return self.joints.shape[1]

    @property
    def frames(self) -> Iterator[SkeletonFrame]:
        for t in range(len(self)):
            yield SkeletonFrame(self.joints[t], int(self.labels[t]), t)


@dataclass(frozen=True)
class Dataset:
    sequences: list[Sequence]
    label_names: list[str]
    joint_count: int
    has_background: bool = False

    def __post_init__(self):
        for s in self.sequences:
            if s.joint_count != self.joint_count:
                raise ValueError(f"sequence {s.id!r} has {s.joint_count} joints, expected {self.joint_count}")
            if len(s) and (s.labels.min() < 0 or s.labels.max() >= len(self.label_names)):
                raise ValueError(f"sequence {s.id!r} has an unknown label id")

    @property
    def n_labels(self) -> int:
        return len(self.label_names)

    @property
    def background(self) -> int | None:
        return self.n_labels - 1 if self.has_background else None

    def subset(self, indices) -> "Dataset":
        return Dataset([self.sequences[i] for i in indices], list(self.label_names),
                       self.joint_count, self.has_background)


# ---------------------------------------------------------------- file format


def _read_sequence(path: Path, seq_id: str, n_labels: int,
                   sequence_label: int | None) -> Sequence:
    if not path.is_file():
        raise DatasetError(f"{path}: missing sequence file")
    with path.open(encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("J="):
        raise DatasetError(f"{path}:1: expected header 'J=<joint_count>'")
    try:
        J = int(lines[0][2:])
    except ValueError:
        raise DatasetError(f"{path}:1: bad joint count {lines[0][2:]!r}") from None
    labels, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 1 + 3 * J:
            raise DatasetError(f"{path}:{lineno}: inconsistent joint count "
                               f"(expected {J} joints, got {(len(parts) - 1) / 3:g})")
        try:
            lab = int(parts[0])
            vals = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from None
        if not 0 <= lab < n_labels:
            raise DatasetError(f"{path}:{lineno}: unknown label id {lab}")
        if not all(math.isfinite(v) for v in vals):
            raise DatasetError(f"{path}:{lineno}: non-finite coordinate")
        if sequence_label is not None and lab != sequence_label:
            raise DatasetError(f"{path}:{lineno}: frame label {lab} differs from sequence label {sequence_label}")
        labels.append(lab)
        rows.append(vals)
    if not rows:
        raise DatasetError(f"{path}: sequence has no frames")
    joints = np.asarray(rows, dtype=np.float64).reshape(len(rows), J, 3)
    return Sequence(seq_id, joints, np.asarray(labels, dtype=np.int64), sequence_label)


def load_dataset(manifest_path) -> Dataset:
    """Load a dataset from its manifest; sequences keep manifest order."""
    manifest = Path(manifest_path)
    if not manifest.is_file():
        raise DatasetError(f"{manifest}: missing manifest")
    labels_path = manifest.parent / LABELS_FILE
    if not labels_path.is_file():
        raise DatasetError(f"{labels_path}: missing label vocabulary")
    label_names = [ln.strip() for ln in labels_path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    has_bg = bool(label_names) and label_names[-1].lower() == BACKGROUND_NAME
    sequences: list[Sequence] = []
    joint_count = None
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        rel, _, lab = line.rpartition(",")
        if not rel:
            raise DatasetError(f"{manifest}:{lineno}: expected '<path>,<label_or_->'")
        seq_label = None
        if lab.strip() != "-":
            try:
                seq_label = int(lab)
            except ValueError:
                raise DatasetError(f"{manifest}:{lineno}: bad sequence label {lab!r}") from None
            if not 0 <= seq_label < len(label_names):
                raise DatasetError(f"{manifest}:{lineno}: unknown label id {seq_label}")
        path = manifest.parent / rel.strip()
        seq = _read_sequence(path, Path(rel.strip()).with_suffix("").as_posix(), len(label_names), seq_label)
        if joint_count is None:
            joint_count = seq.joint_count
        elif seq.joint_count != joint_count:
            raise DatasetError(f"{path}:1: inconsistent joint count "
                               f"({seq.joint_count} vs {joint_count} in earlier files)")
        sequences.append(seq)
    if not sequences:
        raise DatasetError(f"{manifest}: no sequences listed")
    return Dataset(sequences, label_names, joint_count, has_bg)


def save_dataset(dataset: Dataset, directory) -> Path:
    """Write ``dataset`` in the manifest format; returns the manifest path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / LABELS_FILE).write_text("".join(f"{n}\n" for n in dataset.label_names), encoding="utf-8")
    manifest_lines = []
    for seq in dataset.sequences:
        rel = f"{seq.id}.csv"
        (out / rel).parent.mkdir(parents=True, exist_ok=True)
        flat = seq.joints.reshape(len(seq), -1)
        with (out / rel).open("w", encoding="utf-8") as fh:
            fh.write(f"J={seq.joint_count}\n")
            for lab, row in zip(seq.labels.tolist(), flat.tolist()):
                fh.write(str(lab) + "," + ",".join(repr(v) for v in row) + "\n")
        tag = "-" if seq.sequence_label is None else str(seq.sequence_label)
        manifest_lines.append(f"{rel},{tag}\n")
    path = out / "manifest.txt"
    path.write_text("".join(manifest_lines), encoding="utf-8")
    return path


# ---------------------------------------------------------------- normalisation


@dataclass(frozen=True)
class SkeletonSpec:
    """Joint roles used by normalisation; ``vertical_axis`` indexes x/y/z."""

    root: int
    left_hip: int
    right_hip: int
    vertical_axis: int = 1

    @classmethod
    def parse(cls, text: str) -> "SkeletonSpec":
        """Parse ``root,left_hip,right_hip[,vertical_axis]``."""
        vals = [int(v) for v in text.split(",")]
        if len(vals) not in (3, 4):
            raise ValueError(f"expected root,left_hip,right_hip[,vertical_axis], got {text!r}")
        return cls(*vals)


def normalize_joints(joints: np.ndarray, spec: SkeletonSpec) -> np.ndarray:
    """Root-centre, rotate hips onto +x about the vertical axis, scale to unit limb sum."""
    joints = np.asarray(joints, dtype=np.float64)
    for j in (spec.root, spec.left_hip, spec.right_hip):
        if not 0 <= j < len(joints):
            raise ValueError(f"joint {j} not present in a {len(joints)}-joint skeleton")
    centred = joints - joints[spec.root]
    v = spec.vertical_axis
    a, b = [ax for ax in range(3) if ax != v]
    hip = centred[spec.right_hip] - centred[spec.left_hip]
    norm = math.hypot(hip[a], hip[b])
    if norm < 1e-12:
        raise DegenerateSkeletonError("degenerate skeleton: hip axis has no ground-plane extent")
    c, s = hip[a] / norm, hip[b] / norm
    rot = centred.copy()
    # rotate (a, b) plane so the hip projection lands on +a
    rot[:, a] = c * centred[:, a] + s * centred[:, b]
    rot[:, b] = -s * centred[:, a] + c * centred[:, b]
    scale = np.linalg.norm(rot, axis=1).sum()
    if scale < 1e-12:
        raise DegenerateSkeletonError("degenerate skeleton: zero limb length")
    return rot / scale


def normalize_skeleton(frame: SkeletonFrame, spec: SkeletonSpec) -> SkeletonFrame:
    return SkeletonFrame(normalize_joints(frame.joints, spec), frame.label, frame.time_index)


def normalize_sequence(seq: Sequence, spec: SkeletonSpec) -> Sequence:
    """Normalise every frame, dropping (with a warning) frames that cannot be."""
    keep, out = [], []
    for t in range(len(seq)):
        try:
            out.append(normalize_joints(seq.joints[t], spec))
            keep.append(t)
        except DegenerateSkeletonError as exc:
            log.warning("sequence %s frame %d dropped: %s", seq.id, t, exc)
    if not keep:
        raise DegenerateSkeletonError(f"sequence {seq.id}: every frame is degenerate")
    return Sequence(seq.id, np.stack(out), seq.labels[keep], seq.sequence_label)


def normalize_dataset(ds: Dataset, spec: SkeletonSpec) -> Dataset:
    return Dataset([normalize_sequence(s, spec) for s in ds.sequences], list(ds.label_names),
                   ds.joint_count, ds.has_background)


# ---------------------------------------------------------------- synthesis


@dataclass
class SynthConfig:
    num_labels: int = 2
    num_joints: int = 5
    sequences_per_label: int = 100
    frames_per_sequence: int = 40
    pose_centers_per_label: int = 5
    # one (P, P) row-stochastic matrix per label; None -> random kernels
    transition_kernels: list | None = None
    noise_sigma: float = 0.05
    shared_pose_pool: bool = True

    def kernels(self, rng: np.random.Generator) -> list[np.ndarray]:
        P = self.pose_centers_per_label
        if self.transition_kernels is None:
            return [rng.dirichlet(np.ones(P), size=P) for _ in range(self.num_labels)]
        ks = [np.asarray(k, dtype=np.float64) for k in self.transition_kernels]
        if len(ks) != self.num_labels:
            raise ValueError(f"expected {self.num_labels} transition kernels, got {len(ks)}")
        for k in ks:
            if k.shape != (P, P) or (k < 0).any() or not np.allclose(k.sum(axis=1), 1.0, rtol=0, atol=1e-9):
                raise ValueError("transition kernel rows must be stochastic over the pose prototypes")
        return ks


def cyclic_kernel(n: int, step: int, stay: float = 0.0) -> np.ndarray:
    """Kernel moving prototype ``p`` to ``p + step`` (mod n), staying with prob ``stay``."""
    k = np.zeros((n, n))
    for p in range(n):
        k[p, (p + step) % n] += 1.0 - stay
        k[p, p] += stay
    return k


def _sample_path(rng: np.random.Generator, kernel: np.ndarray, length: int) -> np.ndarray:
    P = len(kernel)
    cdf = np.cumsum(kernel, axis=1)
    path = np.empty(length, dtype=np.int64)
    path[0] = rng.integers(P)
    u = rng.random(length - 1)
    for t in range(1, length):
        path[t] = min(int(np.searchsorted(cdf[path[t - 1]], u[t - 1], side="right")), P - 1)
    return path


def generate_synthetic(config: SynthConfig, seed: int) -> Dataset:
    """Recognition dataset whose labels differ in prototype dynamics.

    Each sequence starts at a uniformly drawn prototype, walks the label's
    kernel and emits prototype poses plus isotropic Gaussian noise.  With
    ``shared_pose_pool`` every label uses the same prototypes.
    """
    if config.noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    kernels = config.kernels(rng)
    P, J = config.pose_centers_per_label, config.num_joints
    n_pools = 1 if config.shared_pose_pool else config.num_labels
    pools = rng.normal(size=(n_pools, P, J, 3))
    sequences = []
    for lab in range(config.num_labels):
        pool = pools[0 if config.shared_pose_pool else lab]
        for s in range(config.sequences_per_label):
            path = _sample_path(rng, kernels[lab], config.frames_per_sequence)
            joints = pool[path] + config.noise_sigma * rng.normal(size=(len(path), J, 3))
            labels = np.full(len(path), lab, dtype=np.int64)
            sequences.append(Sequence(f"l{lab}_s{s:04d}", joints, labels, lab))
    names = [f"action{lab}" for lab in range(config.num_labels)]
    return Dataset(sequences, names, J, has_background=False)


def prototype_paths(config: SynthConfig, seed: int) -> list[np.ndarray]:
    """Prototype index paths that :func:`generate_synthetic` walks for ``seed``.

    Replays the same draws, so ``paths[i]`` belongs to ``sequences[i]``.
    """
    rng = np.random.default_rng(seed)
    kernels = config.kernels(rng)
    P, J = config.pose_centers_per_label, config.num_joints
    n_pools = 1 if config.shared_pose_pool else config.num_labels
    rng.normal(size=(n_pools, P, J, 3))
    paths = []
    for lab in range(config.num_labels):
        for _ in range(config.sequences_per_label):
            path = _sample_path(rng, kernels[lab], config.frames_per_sequence)
            rng.normal(size=(len(path), J, 3))
            paths.append(path)
    return paths


@dataclass
class StreamConfig:
    """Detection streams: actions with distinct pose pools separated by background."""

    num_actions: int = 3
    num_joints: int = 5
    pose_centers_per_label: int = 4
    action_length: tuple[int, int] = (30, 50)
    background_length: tuple[int, int] = (250, 300)
    events_per_stream: int = 5
    noise_sigma: float = 0.1
    stay_prob: float = 0.3


def generate_detection_streams(config: StreamConfig, n_streams: int, seed: int) -> Dataset:
    """Long unsegmented streams; the last label id is background.

    Actions alternate with background stretches and every stream starts and
    ends with background.  All streams of one seed share the pose pools.
    """
    rng = np.random.default_rng(seed)
    P, J = config.pose_centers_per_label, config.num_joints
    n_labels = config.num_actions + 1
    pools = rng.normal(size=(n_labels, P, J, 3))
    kernels = [cyclic_kernel(P, 1 + (lab % max(1, P - 1)), config.stay_prob) for lab in range(n_labels)]
    sequences = []
    for s in range(n_streams):
        parts, labels = [], []

        def emit(lab: int, length: int):
            path = _sample_path(rng, kernels[lab], length)
            parts.append(pools[lab][path] + config.noise_sigma * rng.normal(size=(length, J, 3)))
            labels.append(np.full(length, lab, dtype=np.int64))

        bg = config.num_actions
        emit(bg, int(rng.integers(config.background_length[0], config.background_length[1] + 1)))
        for _ in range(config.events_per_stream):
            emit(int(rng.integers(config.num_actions)),
                 int(rng.integers(config.action_length[0], config.action_length[1] + 1)))
            emit(bg, int(rng.integers(config.background_length[0], config.background_length[1] + 1)))
        sequences.append(Sequence(f"stream{s:03d}", np.concatenate(parts), np.concatenate(labels)))
    names = [f"action{lab}" for lab in range(config.num_actions)] + [BACKGROUND_NAME]
    return Dataset(sequences, names, J, has_background=True)
