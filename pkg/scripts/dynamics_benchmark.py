"""Frame accuracy against temporal order on the two-label dynamics benchmark.

Both labels visit the same five poses with the same frequencies and differ
only in the direction they cycle through them, so a per-frame random forest
(k = 0) sits near chance while the transition forest should not.

    python3 scripts/dynamics_benchmark.py --k 0 1 2 3 --seeds 0 1 2
"""
import argparse
import time

import numpy as np

from transition_forests.experiment import split_sequences, synthetic_kernels
from transition_forests.features import FeatureSpec
from transition_forests.forest import ForestConfig, train_forest_features
from transition_forests.inference import predict_sequence
from transition_forests.skeleton_data import SynthConfig, generate_synthetic
from transition_forests.tree import TreeTrainConfig


def frame_accuracy(forest, test):
    hits = sum(int((np.array([p.argmax_label for p in predict_sequence(forest, s.vectors)]) == s.labels).sum())
               for s in test)
    return hits / sum(len(s) for s in test)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, nargs="+", default=[0, 1, 2, 3])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--trees", type=int, default=20)
    ap.add_argument("--depth", type=int, default=8)
    ap.add_argument("--sequences-per-label", type=int, default=100)
    ap.add_argument("--frames", type=int, default=40)
    args = ap.parse_args()

    synth = SynthConfig(sequences_per_label=args.sequences_per_label, frames_per_sequence=args.frames,
                        transition_kernels=synthetic_kernels(2, 5, 0.2))
    print(f"{'k':>3} {'mean':>7} {'std':>7} {'train s':>8}")
    for k in args.k:
        accs, secs = [], 0.0
        for seed in args.seeds:
            ds = generate_synthetic(synth, seed)
            feats = FeatureSpec().extract_dataset(ds)
            tr, te = split_sequences(len(feats), 0.5, seed)
            cfg = ForestConfig(num_trees=max(args.trees, k), temporal_order=k,
                               tree_config=TreeTrainConfig(max_depth=args.depth), seed=seed)
            t0 = time.perf_counter()
            forest = train_forest_features([feats[i] for i in tr], ds.label_names, cfg)
            secs += time.perf_counter() - t0
            accs.append(frame_accuracy(forest, [feats[i] for i in te]))
        print(f"{k:>3} {np.mean(accs):7.3f} {np.std(accs):7.3f} {secs / len(args.seeds):8.1f}")


if __name__ == "__main__":
    main()
