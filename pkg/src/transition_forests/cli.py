"""Command line entry point: ``tforest <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .experiment import ConfigError, run_experiment, synthetic_kernels
from .features import REPRESENTATIONS, FeatureSpec
from .forest import ForestConfig, ModelFormatError, load_forest, save_forest, train_forest
from .inference import DetectorParams, classify_sequence, detect_online
from .metrics import detection_metrics, events_from_labels, recognition_metrics
from .skeleton_data import (DatasetError, DegenerateSkeletonError, SkeletonSpec, StreamConfig, SynthConfig,
                            generate_detection_streams, generate_synthetic, load_dataset, save_dataset)
from .tree import InvariantViolation, TreeTrainConfig

log = logging.getLogger("transition_forests")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master random seed [0]")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="training worker processes [1]")
    p.add_argument("--verbose", "-v", action="count", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    glob = _global_flags()
    parser = _Parser(prog="tforest", description="Transition forests for skeleton action recognition "
                                                 "and online detection.", parents=[glob])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[glob], help="train a forest from a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="model file (.tfor)")
    p.add_argument("--trees", type=int, default=20)
    p.add_argument("--k", type=int, default=2, help="temporal order; 0 trains a plain random forest")
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--features", choices=REPRESENTATIONS, default="jp")
    p.add_argument("--window", type=int, default=1, help="stack this many frames (sliding-window baseline)")
    p.add_argument("--normalize", default=None, metavar="ROOT,LHIP,RHIP[,VERTICAL]",
                   help="normalise skeletons using these joint indices")
    p.add_argument("--transition-prob", type=float, default=0.5)
    p.add_argument("--min-samples-split", type=int, default=10)
    p.add_argument("--candidate-features", type=int, default=None)
    p.add_argument("--candidate-thresholds", type=int, default=10)
    p.add_argument("--sweeps", type=int, default=10)
    p.add_argument("--min-transition-support", type=int, default=10)
    p.add_argument("--no-bootstrap", action="store_true")

    p = sub.add_parser("recognize", parents=[glob], help="classify whole sequences")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--per-frame", default=None, help="write per-frame posteriors to this CSV")
    p.add_argument("--soft", action="store_true", help="marginalise over previous posteriors")

    p = sub.add_parser("detect", parents=[glob], help="online action detection over streams")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--beta-start", type=float, default=0.79)
    p.add_argument("--beta-end", type=float, default=0.16)
    p.add_argument("--min-event-len", type=int, default=1)
    p.add_argument("--events", default=None, help="write detected events to this CSV")
    p.add_argument("--per-frame", default=None)
    p.add_argument("--tol-ratio", type=float, default=0.25)
    p.add_argument("--soft", action="store_true")

    p = sub.add_parser("eval", parents=[glob], help="run an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="report directory")

    p = sub.add_parser("synth", parents=[glob], help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--labels", type=int, default=2)
    p.add_argument("--joints", type=int, default=5)
    p.add_argument("--sequences-per-label", type=int, default=100)
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--prototypes", type=int, default=5)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--stay", type=float, default=0.2)
    p.add_argument("--distinct-poses", action="store_true", help="give each label its own pose pool")
    p.add_argument("--detection", action="store_true", help="write background-separated streams instead")
    p.add_argument("--streams", type=int, default=8)

    p = sub.add_parser("bench", parents=[glob], help="accuracy-vs-k sweep on synthetic dynamics data")
    p.add_argument("--out", required=True)
    p.add_argument("--k-values", default="0,1,2,3")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--trees", type=int, default=20)
    p.add_argument("--depth", type=int, default=8)
    return parser


def _per_frame_writer(path, label_names):
    fh = open(path, "w", newline="", encoding="utf-8")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["sequence_id", "t"] + list(label_names))
    return fh, w


def cmd_train(args) -> int:
    ds = load_dataset(args.manifest)
    norm = SkeletonSpec.parse(args.normalize) if args.normalize else None
    tree_cfg = TreeTrainConfig(max_depth=args.depth, min_samples_split=args.min_samples_split,
                               transition_node_prob=args.transition_prob,
                               n_candidate_features=args.candidate_features,
                               n_candidate_thresholds=args.candidate_thresholds,
                               coordinate_descent_sweeps=args.sweeps,
                               min_transition_support=args.min_transition_support)
    cfg = ForestConfig(args.trees, args.k, tree_cfg, args.seed, FeatureSpec(args.features, args.window, norm),
                       not args.no_bootstrap)
    forest = train_forest(ds, cfg, threads=args.threads)
    save_forest(forest, args.out)
    print(f"trained {len(forest.trees)} trees (k={forest.k}, D={forest.feature_dim}) -> {args.out}")
    return EXIT_OK


def _dataset_for(forest, manifest):
    ds = load_dataset(manifest)
    if ds.label_names != forest.label_names:
        raise DatasetError(f"{manifest}: label vocabulary differs from the model's")
    feats = forest.config.feature_spec.extract_dataset(ds)
    return ds, feats


def cmd_recognize(args) -> int:
    forest = load_forest(args.model)
    ds, feats = _dataset_for(forest, args.manifest)
    fh, w = _per_frame_writer(args.per_frame, forest.label_names) if args.per_frame else (None, None)
    pred, gt = [], []
    try:
        for fs in feats:
            label, posts = classify_sequence(forest, fs.vectors, args.soft)
            print(f"{fs.id},{forest.label_names[label]}")
            pred.append(label)
            gt.append(int(np.bincount(fs.labels).argmax()))
            if w is not None:
                for p in posts:
                    w.writerow([fs.id, p.time_index] + [repr(float(v)) for v in p.probs])
    finally:
        if fh is not None:
            fh.close()
    rep = recognition_metrics(pred, gt, forest.n_labels)
    print(f"sequence accuracy: {rep.overall_accuracy:.4f} ({len(pred)} sequences)")
    return EXIT_OK


def cmd_detect(args) -> int:
    forest = load_forest(args.model)
    ds, feats = _dataset_for(forest, args.manifest)
    params = DetectorParams(args.beta_start, args.beta_end, args.min_event_len)
    bg = ds.background
    ev_fh = open(args.events, "w", newline="", encoding="utf-8") if args.events else None
    ev_w = csv.writer(ev_fh, lineterminator="\n") if ev_fh else None
    if ev_w:
        ev_w.writerow(["sequence_id", "label_name", "start", "end", "mean_score"])
    pf_fh, pf_w = _per_frame_writer(args.per_frame, forest.label_names) if args.per_frame else (None, None)
    pred, gt, events, gt_events = [], [], [], []
    offset = 0
    try:
        for fs in feats:
            for post, event in detect_online(forest, fs.vectors, params, bg, args.soft):
                if post is not None:
                    pred.append(post.argmax_label)
                    if pf_w:
                        pf_w.writerow([fs.id, post.time_index] + [repr(float(v)) for v in post.probs])
                if event is not None:
                    if ev_w:
                        ev_w.writerow([fs.id, forest.label_names[event.label], event.start_frame,
                                       event.end_frame, repr(event.mean_score)])
                    events.append(replace(event, start_frame=event.start_frame + offset,
                                          end_frame=event.end_frame + offset))
            gt.extend(fs.labels.tolist())
            gt_events += [replace(e, start_frame=e.start_frame + offset, end_frame=e.end_frame + offset)
                          for e in events_from_labels(fs.labels, bg)]
            offset += len(fs)
    finally:
        for fh in (ev_fh, pf_fh):
            if fh is not None:
                fh.close()
    rep = detection_metrics(pred, gt, events, gt_events, forest.n_labels, bg, args.tol_ratio)
    print(f"events: {len(events)} detected, {rep.matched}/{rep.n_gt_events} matched")
    print(f"overall F1 {rep.overall_f1:.4f}  SL {rep.sl:.4f}  EL {rep.el:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    run_experiment(args.config, args.out, threads=args.threads)
    print(f"reports written to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.detection:
        ds = generate_detection_streams(StreamConfig(num_actions=args.labels, num_joints=args.joints,
                                                     pose_centers_per_label=args.prototypes,
                                                     noise_sigma=args.noise), args.streams, args.seed)
    else:
        cfg = SynthConfig(args.labels, args.joints, args.sequences_per_label, args.frames, args.prototypes,
                          synthetic_kernels(args.labels, args.prototypes, args.stay), args.noise,
                          not args.distinct_poses)
        ds = generate_synthetic(cfg, args.seed)
    path = save_dataset(ds, args.out)
    print(f"wrote {len(ds.sequences)} sequences -> {path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "bench.ini"
    cfg_path.write_text(
        "[experiment]\nprotocol = synthetic-benchmark\n"
        f"seeds = {args.seeds}\n\n[forest]\ntrees = {args.trees}\ndepth = {args.depth}\n"
        f"k_values = {args.k_values}\n", encoding="utf-8")
    res = run_experiment(cfg_path, out, threads=args.threads)
    print("k,frame_accuracy_mean,frame_accuracy_std")
    for row in res["curve"]:
        print(f"{row[0]},{row[1]:.4f},{row[2]:.4f}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "recognize": cmd_recognize, "detect": cmd_detect, "eval": cmd_eval,
            "synth": cmd_synth, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed = getattr(args, "seed", 0)
    args.threads = getattr(args, "threads", 1)
    verbose = getattr(args, "verbose", 0)
    logging.basicConfig(level=logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InvariantViolation as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, ModelFormatError, DegenerateSkeletonError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
