"""Declarative experiments: INI config in, CSV reports out.

Config schema (INI sections and keys; defaults in brackets)::

    [experiment]  protocol = recognition | detection | synthetic-benchmark
                  seeds [0]             comma separated
                  test_fraction [0.5]   share of sequences held out per seed
    [data]        manifest              required for recognition / detection
    [synthetic]   num_labels [2] num_joints [5] sequences_per_label [100]
                  frames_per_sequence [40] prototypes [5] noise_sigma [0.05]
                  stay_prob [0.2] shared_pose_pool [true]
    [features]    representation [jp] window [1] normalize [] (root,lhip,rhip)
    [forest]      trees [20] k [2] depth [8] transition_node_prob [0.5]
                  min_samples_split [10] candidate_features [] candidate_thresholds [10]
                  sweeps [10] min_transition_support [10] laplace_alpha [1.0]
                  row_fallback [pair] bootstrap [true] soft [false]
                  k_values [0,1,2,3]    synthetic-benchmark only
    [detector]    beta_start [0.79] beta_end [0.16] min_event_len [1] tol_ratio [0.25]

Every protocol writes ``report.csv`` (one row per seed and condition plus
mean/std rows); recognition adds ``confusion.csv``, the synthetic benchmark
``accuracy_vs_k.csv``.  Wall-clock timings go to ``timing.csv`` so that the
other files are byte-identical across reruns.
"""
from __future__ import annotations

import configparser
import csv
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .features import FeatureSpec
from .forest import ForestConfig, TransitionForest, train_forest_features
from .inference import DetectorParams, classify_sequence, detect_scores, predict_sequence
from .metrics import detection_metrics, events_from_labels, recognition_metrics
from .skeleton_data import Dataset, SkeletonSpec, SynthConfig, cyclic_kernel, generate_synthetic, load_dataset
from .tree import TreeTrainConfig

log = logging.getLogger(__name__)

PROTOCOLS = ("recognition", "detection", "synthetic-benchmark")


class ConfigError(ValueError):
    pass


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(" ", "").split(",") if v]


@dataclass
class ExperimentConfig:
    protocol: str
    seeds: list[int]
    test_fraction: float
    manifest: Path | None
    synth: SynthConfig
    stay_prob: float
    features: FeatureSpec
    forest: ForestConfig
    k_values: list[int]
    soft: bool
    detector: DetectorParams
    tol_ratio: float


_KNOWN = {
    "experiment": {"protocol", "seeds", "test_fraction"},
    "data": {"manifest"},
    "synthetic": {"num_labels", "num_joints", "sequences_per_label", "frames_per_sequence",
                  "prototypes", "noise_sigma", "stay_prob", "shared_pose_pool"},
    "features": {"representation", "window", "normalize"},
    "forest": {"trees", "k", "depth", "transition_node_prob", "min_samples_split", "candidate_features",
               "candidate_thresholds", "sweeps", "min_transition_support", "laplace_alpha",
               "row_fallback", "bootstrap", "soft", "k_values"},
    "detector": {"beta_start", "beta_end", "min_event_len", "tol_ratio"},
}


def synthetic_kernels(num_labels: int, prototypes: int, stay: float) -> list[np.ndarray]:
    """Doubly stochastic cyclic kernels with distinct steps 1, -1, 2, -2, ...

    Doubly stochastic kernels share the uniform stationary law, so the pose
    marginals of all labels coincide and only the dynamics differ.
    """
    steps, s = [], 1
    while len(steps) < num_labels:
        for cand in (s, -s):
            if cand % prototypes and cand % prototypes not in [x % prototypes for x in steps]:
                steps.append(cand)
        s += 1
        if s > prototypes:
            raise ConfigError(f"{prototypes} prototypes cannot give {num_labels} distinct dynamics")
    return [cyclic_kernel(prototypes, st, stay) for st in steps[:num_labels]]


def parse_config(path) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise ConfigError(f"cannot read config {path}")
    for section in cp.sections():
        if section not in _KNOWN:
            raise ConfigError(f"unknown section [{section}]")
        unknown = set(cp[section]) - _KNOWN[section]
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")

    def get(section, key, default, conv=str):
        if not cp.has_option(section, key):
            return default
        raw = cp.get(section, key).strip()
        try:
            if conv is bool:
                return cp.getboolean(section, key)
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None

    try:
        protocol = get("experiment", "protocol", None)
        if protocol not in PROTOCOLS:
            raise ConfigError(f"[experiment] protocol must be one of {PROTOCOLS}, got {protocol!r}")
        manifest = get("data", "manifest", None)
        if protocol != "synthetic-benchmark" and manifest is None:
            raise ConfigError(f"protocol {protocol} needs [data] manifest")
        if manifest is not None:
            manifest = (Path(path).parent / manifest).resolve()
        norm = get("features", "normalize", "")
        features = FeatureSpec(get("features", "representation", "jp"), get("features", "window", 1, int),
                               SkeletonSpec.parse(norm) if norm else None)
        cand = get("forest", "candidate_features", "")
        tree_cfg = TreeTrainConfig(
            max_depth=get("forest", "depth", 8, int),
            min_samples_split=get("forest", "min_samples_split", 10, int),
            transition_node_prob=get("forest", "transition_node_prob", 0.5, float),
            n_candidate_features=int(cand) if cand else None,
            n_candidate_thresholds=get("forest", "candidate_thresholds", 10, int),
            coordinate_descent_sweeps=get("forest", "sweeps", 10, int),
            min_transition_support=get("forest", "min_transition_support", 10, int),
            laplace_alpha=get("forest", "laplace_alpha", 1.0, float),
            row_fallback=get("forest", "row_fallback", "pair"))
        forest = ForestConfig(get("forest", "trees", 20, int), get("forest", "k", 2, int), tree_cfg, 0,
                              features, get("forest", "bootstrap", True, bool))
        stay = get("synthetic", "stay_prob", 0.2, float)
        synth = SynthConfig(
            num_labels=get("synthetic", "num_labels", 2, int),
            num_joints=get("synthetic", "num_joints", 5, int),
            sequences_per_label=get("synthetic", "sequences_per_label", 100, int),
            frames_per_sequence=get("synthetic", "frames_per_sequence", 40, int),
            pose_centers_per_label=get("synthetic", "prototypes", 5, int),
            noise_sigma=get("synthetic", "noise_sigma", 0.05, float),
            shared_pose_pool=get("synthetic", "shared_pose_pool", True, bool))
        synth.transition_kernels = synthetic_kernels(synth.num_labels, synth.pose_centers_per_label, stay)
        detector = DetectorParams(get("detector", "beta_start", 0.79, float),
                                  get("detector", "beta_end", 0.16, float),
                                  get("detector", "min_event_len", 1, int))
        test_fraction = get("experiment", "test_fraction", 0.5, float)
        if not 0 < test_fraction < 1:
            raise ConfigError("[experiment] test_fraction must lie in (0, 1)")
        return ExperimentConfig(protocol, get("experiment", "seeds", [0], _ints), test_fraction, manifest,
                                synth, stay, features, forest, get("forest", "k_values", [0, 1, 2, 3], _ints),
                                get("forest", "soft", False, bool), detector,
                                get("detector", "tol_ratio", 0.25, float))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def split_sequences(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Shuffled train/test sequence indices; both sides non-empty."""
    order = np.random.default_rng(seed).permutation(n)
    n_test = min(max(1, int(round(test_fraction * n))), n - 1)
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def _forest_for(cfg: ExperimentConfig, seed: int, k: int | None = None) -> ForestConfig:
    f = cfg.forest
    k = f.temporal_order if k is None else k
    return ForestConfig(max(f.num_trees, k), k, f.tree_config, seed, f.feature_spec, f.bootstrap)


def evaluate_recognition(forest: TransitionForest, test, soft: bool = False) -> dict:
    """Frame and sequence accuracy of ``forest`` on feature sequences."""
    frame_pred, frame_gt, seq_pred, seq_gt = [], [], [], []
    for fs in test:
        label, posts = classify_sequence(forest, fs.vectors, soft)
        frame_pred.extend(p.argmax_label for p in posts)
        frame_gt.extend(fs.labels.tolist())
        seq_pred.append(label)
        seq_gt.append(int(np.bincount(fs.labels).argmax()))
    frames = recognition_metrics(frame_pred, frame_gt, forest.n_labels)
    seqs = recognition_metrics(seq_pred, seq_gt, forest.n_labels)
    return {"frame": frames, "sequence": seqs}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(round(v, 12))
    return str(v)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _summary_rows(rows: list[list]) -> list[list]:
    """Mean and std rows over the per-seed rows (first column is the seed)."""
    vals = np.asarray([r[1:] for r in rows], dtype=np.float64)
    return [["mean"] + [float(v) for v in vals.mean(axis=0)],
            ["std"] + [float(v) for v in vals.std(axis=0)]]


def run_experiment(config_path, out_dir, threads: int = 1) -> dict:
    """Run the configured protocol over all seeds and write CSV reports."""
    cfg = parse_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runner = {"recognition": _run_recognition, "detection": _run_detection,
              "synthetic-benchmark": _run_synthetic}[cfg.protocol]
    return runner(cfg, out, threads)


def _load(cfg: ExperimentConfig) -> Dataset:
    return load_dataset(cfg.manifest)


def _run_recognition(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    ds = _load(cfg)
    feats = cfg.features.extract_dataset(ds)
    rows, timing = [], []
    confusion = np.zeros((ds.n_labels, ds.n_labels), dtype=np.int64)
    for seed in cfg.seeds:
        tr, te = split_sequences(len(feats), cfg.test_fraction, seed)
        t0 = time.perf_counter()
        forest = train_forest_features([feats[i] for i in tr], ds.label_names, _forest_for(cfg, seed), threads)
        t1 = time.perf_counter()
        res = evaluate_recognition(forest, [feats[i] for i in te], cfg.soft)
        timing.append([seed, t1 - t0, time.perf_counter() - t1])
        confusion += res["frame"].confusion
        rows.append([seed, res["frame"].overall_accuracy, res["sequence"].overall_accuracy])
    header = ["seed", "frame_accuracy", "sequence_accuracy"]
    _write_csv(out / "report.csv", header, rows + _summary_rows(rows))
    _write_csv(out / "confusion.csv", ["true\\pred"] + ds.label_names,
               [[ds.label_names[i]] + confusion[i].tolist() for i in range(ds.n_labels)])
    _write_csv(out / "timing.csv", ["seed", "train_s", "eval_s"], timing)
    return {"rows": rows, "confusion": confusion}


def _run_detection(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    ds = _load(cfg)
    if not ds.has_background:
        raise ConfigError("detection protocol needs a vocabulary ending in 'background'")
    feats = cfg.features.extract_dataset(ds)
    actions = [n for n in ds.label_names if n != ds.label_names[ds.background]]
    rows, timing = [], []
    for seed in cfg.seeds:
        tr, te = split_sequences(len(feats), cfg.test_fraction, seed)
        forest = train_forest_features([feats[i] for i in tr], ds.label_names, _forest_for(cfg, seed), threads)
        pred, gt, events, gt_events = [], [], [], []
        offset = 0
        t0 = time.perf_counter()
        for i in te:
            fs = feats[i]
            posts = predict_sequence(forest, fs.vectors, cfg.soft)
            evs = detect_scores([p.probs for p in posts], cfg.detector, ds.background)
            # offset events so that streams concatenate without merging
            for src, dst in ((evs, events), (events_from_labels(fs.labels, ds.background), gt_events)):
                dst.extend(replace(e, start_frame=e.start_frame + offset, end_frame=e.end_frame + offset)
                           for e in src)
            pred.extend(p.argmax_label for p in posts)
            gt.extend(fs.labels.tolist())
            offset += len(fs)
        elapsed = time.perf_counter() - t0
        rep = detection_metrics(pred, gt, events, gt_events, ds.n_labels, ds.background, cfg.tol_ratio)
        rows.append([seed, rep.overall_f1, rep.sl, rep.el, rep.matched / max(rep.n_gt_events, 1)]
                    + [float(rep.per_class_f1[c]) for c in range(ds.n_labels) if c != ds.background])
        timing.append([seed, elapsed, offset / elapsed if elapsed else float("inf")])
    header = ["seed", "overall_f1", "sl", "el", "matched_fraction"] + [f"f1_{a}" for a in actions]
    _write_csv(out / "report.csv", header, rows + _summary_rows(rows))
    _write_csv(out / "timing.csv", ["seed", "inference_s", "frames_per_s"], timing)
    return {"rows": rows}


def _run_synthetic(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    rows, curve, timing = [], [], []
    for k in cfg.k_values:
        per_seed = []
        for seed in cfg.seeds:
            ds = generate_synthetic(cfg.synth, seed)
            feats = cfg.features.extract_dataset(ds)
            tr, te = split_sequences(len(feats), cfg.test_fraction, seed)
            t0 = time.perf_counter()
            forest = train_forest_features([feats[i] for i in tr], ds.label_names, _forest_for(cfg, seed, k), threads)
            res = evaluate_recognition(forest, [feats[i] for i in te], cfg.soft)
            timing.append([k, seed, time.perf_counter() - t0])
            row = [k, seed, res["frame"].overall_accuracy, res["sequence"].overall_accuracy]
            rows.append(row)
            per_seed.append(row[2:])
        arr = np.asarray(per_seed)
        curve.append([k, float(arr[:, 0].mean()), float(arr[:, 0].std()),
                      float(arr[:, 1].mean()), float(arr[:, 1].std())])
    _write_csv(out / "report.csv", ["k", "seed", "frame_accuracy", "sequence_accuracy"], rows)
    _write_csv(out / "accuracy_vs_k.csv", ["k", "frame_accuracy_mean", "frame_accuracy_std",
                                           "sequence_accuracy_mean", "sequence_accuracy_std"], curve)
    _write_csv(out / "timing.csv", ["k", "seed", "seconds"], timing)
    return {"rows": rows, "curve": curve}
