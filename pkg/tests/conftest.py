import numpy as np
import pytest

from transition_forests.features import FeatureSequence
from transition_forests.forest import ForestConfig, ForestTree, TransitionForest, train_forest_features
from transition_forests.skeleton_data import SynthConfig, cyclic_kernel, generate_synthetic
from transition_forests.tree import LeafTables, TransitionTree, TreeTrainConfig


def dynamics_benchmark(seed: int, sequences_per_label: int = 100, frames: int = 40) -> tuple[list, list]:
    """Two labels sharing five poses, told apart only by the direction they cycle them."""
    cfg = SynthConfig(num_labels=2, pose_centers_per_label=5, sequences_per_label=sequences_per_label,
                      frames_per_sequence=frames, noise_sigma=0.05, shared_pose_pool=True,
                      transition_kernels=[cyclic_kernel(5, 1, 0.2), cyclic_kernel(5, -1, 0.2)])
    ds = generate_synthetic(cfg, seed)
    seqs = [FeatureSequence(s.id, s.joints.reshape(len(s), -1), s.labels) for s in ds.sequences]
    order = np.random.default_rng(seed).permutation(len(seqs))
    half = len(seqs) // 2
    return [seqs[i] for i in order[:half]], [seqs[i] for i in order[half:]]


def single_leaf_forest(class_dists, rows=None, distances=None, k=None, dim=1) -> TransitionForest:
    """Forest of single-leaf trees with hand-set tables.

    ``rows[m]`` is tree m's (Y, Y) transition matrix for the leaf pair (0, 0),
    or ``None`` for no stored entry.
    """
    n = len(class_dists)
    rows = rows or [None] * n
    distances = distances or [None] * n
    k = k if k is not None else max([d or 0 for d in distances])
    trees = []
    for cd, row, d in zip(class_dists, rows, distances):
        tables = LeafTables(np.array([cd], dtype=float))
        if row is not None:
            tables.trans_dist[(0, 0)] = np.asarray(row, dtype=float)
            tables.support[(0, 0)] = 10
        trees.append(ForestTree(TransitionTree([0], [-1], [0.0], dim), tables, d))
    Y = len(class_dists[0])
    cfg = ForestConfig(num_trees=n, temporal_order=k)
    return TransitionForest(trees, [f"c{i}" for i in range(Y)], dim, cfg)


@pytest.fixture(scope="session")
def small_split():
    return dynamics_benchmark(0, sequences_per_label=12, frames=25)


@pytest.fixture(scope="session")
def small_forest(small_split):
    train, _ = small_split
    cfg = ForestConfig(num_trees=6, temporal_order=2, seed=3, tree_config=TreeTrainConfig(max_depth=5))
    return train_forest_features(train, ["action0", "action1"], cfg)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda s: int(s.split()[1][1:])):
            terminalreporter.write_line(line)
