"""Frame accuracy as the number of trees grows, at a fixed temporal order.

    python3 scripts/ensemble_size.py --trees 1 2 4 8 12 --k 1
"""
import argparse

import numpy as np

from transition_forests.experiment import split_sequences, synthetic_kernels
from transition_forests.features import FeatureSpec
from transition_forests.forest import ForestConfig, train_forest_features
from transition_forests.skeleton_data import SynthConfig, generate_synthetic
from transition_forests.tree import TreeTrainConfig

from dynamics_benchmark import frame_accuracy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trees", type=int, nargs="+", default=[1, 2, 4, 8, 12, 20])
    ap.add_argument("--k", type=int, default=1)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--depth", type=int, default=8)
    args = ap.parse_args()

    synth = SynthConfig(transition_kernels=synthetic_kernels(2, 5, 0.2))
    data = {}
    for seed in args.seeds:
        ds = generate_synthetic(synth, seed)
        feats = FeatureSpec().extract_dataset(ds)
        tr, te = split_sequences(len(feats), 0.5, seed)
        data[seed] = ([feats[i] for i in tr], [feats[i] for i in te], ds.label_names)

    print(f"{'trees':>5} {'mean':>7} {'std':>7}")
    for m in args.trees:
        if m < args.k:
            print(f"{m:>5}  skipped, fewer trees than k")
            continue
        accs = []
        for seed, (train, test, names) in data.items():
            cfg = ForestConfig(num_trees=m, temporal_order=args.k,
                               tree_config=TreeTrainConfig(max_depth=args.depth), seed=seed)
            accs.append(frame_accuracy(train_forest_features(train, names, cfg), test))
        print(f"{m:>5} {np.mean(accs):7.3f} {np.std(accs):7.3f}")


if __name__ == "__main__":
    main()
