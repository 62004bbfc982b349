"""Online detection on synthetic streams where actions are separated by background.

Trains on all but the last stream, then replays the held-out stream frame by
frame and prints every event the detector emits next to the ground truth.

    python3 scripts/detection_demo.py --seed 3
"""
import argparse
import time

from transition_forests.forest import ForestConfig, train_forest
from transition_forests.inference import DetectorParams, detect_online
from transition_forests.metrics import detection_metrics, events_from_labels
from transition_forests.skeleton_data import StreamConfig, generate_detection_streams
from transition_forests.tree import TreeTrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--streams", type=int, default=7)
    ap.add_argument("--trees", type=int, default=10)
    ap.add_argument("--k", type=int, default=2)
    ap.add_argument("--beta-start", type=float, default=0.79)
    ap.add_argument("--beta-end", type=float, default=0.16)
    args = ap.parse_args()

    ds = generate_detection_streams(StreamConfig(), args.streams, args.seed)
    train, test = ds.subset(range(args.streams - 1)), ds.subset([args.streams - 1])
    cfg = ForestConfig(num_trees=args.trees, temporal_order=args.k, tree_config=TreeTrainConfig(max_depth=8),
                       seed=args.seed)
    forest = train_forest(train, cfg)
    stream = cfg.feature_spec.extract(test.sequences[0])

    frames, events = [], []
    t0 = time.perf_counter()
    for post, event in detect_online(forest, stream.vectors, DetectorParams(args.beta_start, args.beta_end)):
        if post is not None:
            frames.append(post.argmax_label)
        if event is not None:
            events.append(event)
    fps = len(frames) / (time.perf_counter() - t0)

    gt = events_from_labels(stream.labels, ds.background)
    print("ground truth")
    for e in gt:
        print(f"  {ds.label_names[e.label]:<10} {e.start_frame:5d} .. {e.end_frame:5d}")
    print("detected")
    for e in events:
        print(f"  {ds.label_names[e.label]:<10} {e.start_frame:5d} .. {e.end_frame:5d}  mean {e.mean_score:.3f}")
    rep = detection_metrics(frames, stream.labels, events, gt, ds.n_labels, ds.background)
    print(f"matched {rep.matched}/{rep.n_gt_events}  overall F1 {rep.overall_f1:.3f}  "
          f"SL {rep.sl:.2f}  EL {rep.el:.2f}  {fps:.0f} frames/s")


if __name__ == "__main__":
    main()
