import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transition_forests.skeleton_data import SynthConfig, cyclic_kernel, generate_synthetic
from transition_forests.stats import build_transition_sets, local_transition_objective
from transition_forests.tree import (
    SplitParams,
    TransitionTree,
    TreeGrower,
    TreeTrainConfig,
    classification_objectives,
    finalize_leaves,
    grow_tree,
    optimize_classification_node,
    sample_candidates,
)

from oracles import descend, entropy_bits


def _flat(ds):
    X = np.concatenate([s.joints.reshape(len(s), -1) for s in ds.sequences])
    y = np.concatenate([s.labels for s in ds.sequences])
    return X, y, [len(s) for s in ds.sequences]


@pytest.fixture(scope="module")
def dynamics_data():
    cfg = SynthConfig(sequences_per_label=15, frames_per_sequence=30,
                      transition_kernels=[cyclic_kernel(5, 1, 0.2), cyclic_kernel(5, -1, 0.2)])
    return _flat(generate_synthetic(cfg, 3))


# -- candidates


def test_candidate_count_and_determinism():
    X = np.random.default_rng(0).normal(size=(30, 12))
    cfg = TreeTrainConfig(n_candidate_features=8, n_candidate_thresholds=10)
    a = sample_candidates(np.random.default_rng(4), X, cfg)
    b = sample_candidates(np.random.default_rng(4), X, cfg)
    assert len(a) == 80
    assert a == b
    assert len({c.feature_index for c in a}) == 8


def test_constant_feature_candidates_send_everything_left():
    X = np.random.default_rng(1).normal(size=(20, 4))
    X[:, 3] = 2.5
    cfg = TreeTrainConfig(n_candidate_features=4, n_candidate_thresholds=5)
    cands = [c for c in sample_candidates(np.random.default_rng(0), X, cfg) if c.feature_index == 3]
    assert len(cands) == 5
    for c in cands:
        assert c.threshold == 2.5
        assert (X[:, 3] - c.threshold <= 0).all()


def test_thresholds_within_node_range():
    X = np.random.default_rng(2).uniform(-3, 7, size=(40, 5))
    for c in sample_candidates(np.random.default_rng(9), X, TreeTrainConfig()):
        col = X[:, c.feature_index]
        assert col.min() <= c.threshold <= col.max()


def test_empty_node_rejected():
    with pytest.raises(ValueError):
        sample_candidates(np.random.default_rng(0), np.zeros((0, 3)), TreeTrainConfig())


# -- classification splits


def test_separable_node():
    X = np.array([[0.0], [1.0], [10.0], [11.0]] * 3)
    y = np.array([0, 0, 1, 1] * 3)
    cfg = TreeTrainConfig(min_samples_split=2, n_candidate_thresholds=50)
    split, obj = optimize_classification_node(X, y, 2, cfg, np.random.default_rng(0))
    assert obj == 0.0
    assert 1.0 <= split.threshold < 10.0


def test_pure_node_takes_first_candidate():
    X = np.random.default_rng(3).normal(size=(12, 3))
    y = np.zeros(12, dtype=int)
    cfg = TreeTrainConfig(min_samples_split=2)
    split, obj = optimize_classification_node(X, y, 2, cfg, np.random.default_rng(5))
    assert obj == 0.0
    assert split == sample_candidates(np.random.default_rng(5), X, cfg)[0]


def test_selected_objective_is_exhaustive_minimum():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(50, 6))
    y = rng.integers(0, 3, 50)
    cfg = TreeTrainConfig()
    split, obj = optimize_classification_node(X, y, 3, cfg, np.random.default_rng(11))
    scores = []
    for c in sample_candidates(np.random.default_rng(11), X, cfg):
        left = y[X[:, c.feature_index] <= c.threshold]
        right = y[X[:, c.feature_index] > c.threshold]
        scores.append(sum(len(part) * entropy_bits(np.bincount(part, minlength=3)) for part in (left, right)))
    assert obj == pytest.approx(min(scores), abs=1e-9)


def test_small_node_rejected():
    with pytest.raises(ValueError, match="min_samples_split"):
        optimize_classification_node(np.zeros((3, 2)), np.array([0, 1, 0]), 2, TreeTrainConfig(),
                                     np.random.default_rng(0))


# -- routing


def test_route_boundary_goes_left():
    tree = TransitionTree([0, 1, 2], [1, -1, -1], [0.5, 0.0, 0.0], 2)
    assert tree.route([9.0, 0.5]) == 0
    assert tree.route([9.0, 0.5000001]) == 1
    single = TransitionTree([0], [-1], [0.0], 4)
    assert single.route(np.ones(4)) == 0
    with pytest.raises(ValueError):
        tree.route([1.0, 2.0, 3.0])


def test_route_matches_recursive_descent(dynamics_data):
    X, y, lengths = dynamics_data
    tree = grow_tree(X, y, lengths, 2, TreeTrainConfig(d=1), np.random.default_rng(2))
    leaf_of_node = {int(n): k for k, n in enumerate(tree.leaf_node_ids())}
    probe = np.random.default_rng(3).normal(size=(200, X.shape[1]))
    for x in np.concatenate([probe, X[:100]]):
        expected = leaf_of_node[descend(tree.structure(), x)]
        assert tree.route(x) == expected
    assert (tree.route_many(probe) == [leaf_of_node[descend(tree.structure(), x)] for x in probe]).all()


def test_missing_child_rejected():
    with pytest.raises(ValueError, match="missing a child"):
        TransitionTree([0, 1], [0, -1], [0.0, 0.0], 1)


# -- growth


def test_pure_training_set_gives_single_leaf():
    X = np.random.default_rng(0).normal(size=(40, 3))
    tree = grow_tree(X, np.ones(40, dtype=int), [20, 20], 2, TreeTrainConfig(d=1), np.random.default_rng(0))
    assert tree.n_leaves == 1 and tree.n_nodes == 1


def test_depth_one_has_two_leaves(dynamics_data):
    X, y, lengths = dynamics_data
    tree = grow_tree(X, y, lengths, 2, TreeTrainConfig(max_depth=1, d=1), np.random.default_rng(0))
    assert tree.n_leaves == 2
    assert [n for n, _, _ in tree.structure()] == [0, 1, 2]


def test_growth_is_deterministic(dynamics_data):
    X, y, lengths = dynamics_data
    cfg = TreeTrainConfig(d=2)
    a = grow_tree(X, y, lengths, 2, cfg, np.random.default_rng(21))
    b = grow_tree(X, y, lengths, 2, cfg, np.random.default_rng(21))
    assert a == b
    assert a.structure() == b.structure()


def test_every_frame_reaches_one_leaf(dynamics_data):
    X, y, lengths = dynamics_data
    tree = grow_tree(X, y, lengths, 2, TreeTrainConfig(d=1), np.random.default_rng(4))
    leaves = tree.route_many(X)
    assert leaves.min() >= 0 and leaves.max() < tree.n_leaves
    assert np.bincount(leaves, minlength=tree.n_leaves).sum() == len(X)


def test_grower_assignment_agrees_with_routing(dynamics_data):
    X, y, lengths = dynamics_data
    g = TreeGrower(X, y, lengths, 2, TreeTrainConfig(d=1, max_depth=5), np.random.default_rng(8))
    tree = g.grow()
    leaf_nodes = tree.leaf_node_ids()
    assert (leaf_nodes[tree.route_many(X)] == g.node_of).all()


def test_empty_training_set():
    with pytest.raises(ValueError):
        grow_tree(np.zeros((0, 2)), np.zeros(0, dtype=int), [], 2, TreeTrainConfig(), np.random.default_rng(0))


def test_config_validation():
    with pytest.raises(ValueError):
        TreeTrainConfig(max_depth=0)
    with pytest.raises(ValueError):
        TreeTrainConfig(d=0)
    with pytest.raises(ValueError):
        TreeTrainConfig(transition_node_prob=1.5)


# -- level learning


def test_zero_transition_prob_is_greedy(dynamics_data):
    X, y, lengths = dynamics_data
    g = TreeGrower(X, y, lengths, 2, TreeTrainConfig(transition_node_prob=0.0, d=1), np.random.default_rng(6))
    g.learn_level([0])
    split, _ = optimize_classification_node(X, y, 2, TreeTrainConfig(), np.random.default_rng(6))
    assert g.splits[0] == split


def test_single_transition_node_minimises_own_children(dynamics_data):
    X, y, lengths = dynamics_data
    cfg = TreeTrainConfig(transition_node_prob=1.0, d=1, coordinate_descent_sweeps=1)
    g = TreeGrower(X, y, lengths, 2, cfg, np.random.default_rng(5))
    frames = np.arange(len(X))
    feats = np.array([0, 1, 2, 3])
    thr = np.array([-0.5, 0.0, 0.2, 0.7])
    fast = g.local_objectives(0, frames, feats, thr)
    for k in range(len(feats)):
        node = np.where(X[:, feats[k]] > thr[k], 2, 1)
        offsets = np.cumsum([0] + lengths)
        table = build_transition_sets([node[a:b] for a, b in zip(offsets[:-1], offsets[1:])],
                                      [y[a:b] for a, b in zip(offsets[:-1], offsets[1:])], 1, 2)
        assert fast[k] == pytest.approx(local_transition_objective(table, 0, []), abs=1e-9)


def test_fast_local_objective_matches_table(dynamics_data):
    X, y, lengths = dynamics_data
    cfg = TreeTrainConfig(transition_node_prob=1.0, d=2, max_depth=3)
    g = TreeGrower(X, y, lengths, 2, cfg, np.random.default_rng(12))
    frontier = g.learn_level(g.learn_level([0], 0), 1)
    # parents of the new frontier are the level-1 nodes whose splits are in place
    level = sorted({(n - 1) // 2 for n in frontier})
    assert len(level) >= 2
    stopped = list(g.leaves)
    offsets = np.cumsum([0] + lengths)
    for j in level:
        fj = np.flatnonzero((g.node_of == 2 * j + 1) | (g.node_of == 2 * j + 2))
        feats = np.array([0, 5, 9])
        thr = np.array([0.0, 0.3, -0.2])
        fast = g.local_objectives(j, fj, feats, thr)
        for k in range(3):
            node = g.node_of.copy()
            node[fj] = np.where(X[fj, feats[k]] > thr[k], 2 * j + 2, 2 * j + 1)
            table = build_transition_sets([node[a:b] for a, b in zip(offsets[:-1], offsets[1:])],
                                          [y[a:b] for a, b in zip(offsets[:-1], offsets[1:])], 2, 2)
            peers = [i for i in level if i != j]
            assert fast[k] == pytest.approx(
                local_transition_objective(table, j, peers, bucket_peers=stopped), abs=1e-8)


def test_transition_levels_lower_the_objective(dynamics_data):
    X, y, lengths = dynamics_data
    cfg = TreeTrainConfig(transition_node_prob=1.0, d=1)
    g = TreeGrower(X, y, lengths, 2, cfg, np.random.default_rng(0))
    g.grow()
    improved = 0
    for r in g.reports:
        trace = r.objective_trace
        assert all(b <= a for a, b in zip(trace, trace[1:]))
        if r.accepted_updates:
            improved += trace[-1] < trace[0]
    assert improved > 0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.integers(1, 3))
def test_objective_trace_never_rises(seed, p, d):
    rng = np.random.default_rng(seed)
    lengths = [int(n) for n in rng.integers(5, 30, 6)]
    n = sum(lengths)
    X = rng.normal(size=(n, 3))
    y = rng.integers(0, 3, n)
    g = TreeGrower(X, y, lengths, 3, TreeTrainConfig(transition_node_prob=p, d=d, max_depth=4), rng)
    g.grow()
    for r in g.reports:
        assert all(b <= a for a, b in zip(r.objective_trace, r.objective_trace[1:]))
        assert r.sweeps <= 10


# -- leaf tables


def test_class_dist_laplace():
    tree = TransitionTree([0], [-1], [0.0], 1)
    tables = finalize_leaves(tree, np.zeros((4, 1)), np.array([0, 0, 0, 1]), [4], 2, TreeTrainConfig())
    assert tables.class_dist[0] == pytest.approx([4 / 6, 2 / 6], abs=1e-12)


def test_support_threshold():
    tree = TransitionTree([0], [-1], [0.0], 1)
    y = np.array([0, 1] * 5)
    cfg = TreeTrainConfig(d=1)
    assert finalize_leaves(tree, np.zeros((10, 1)), y, [10], 2, cfg).trans_dist == {}
    tables = finalize_leaves(tree, np.zeros((11, 1)), np.array([0, 1] * 5 + [0]), [11], 2, cfg)
    assert tables.support[(0, 0)] == 10


def test_alternating_sequence_rows():
    tree = TransitionTree([0], [-1], [0.0], 1)
    y = np.array([0, 1] * 10)
    tables = finalize_leaves(tree, np.zeros((20, 1)), y, [20], 2, TreeTrainConfig(d=1))
    # 10 transitions 0 -> 1 and 9 transitions 1 -> 0
    assert tables.trans_dist[(0, 0)] == pytest.approx(np.array([[1 / 12, 11 / 12], [10 / 11, 1 / 11]]))


@pytest.mark.parametrize("fallback", ["pair", "leaf"])
def test_unseen_previous_label_rows(fallback):
    tree = TransitionTree([0], [-1], [0.0], 1)
    y = np.zeros(15, dtype=int)
    cfg = TreeTrainConfig(d=1, row_fallback=fallback)
    tables = finalize_leaves(tree, np.zeros((15, 1)), y, [15], 2, cfg)
    rows = tables.trans_dist[(0, 0)]
    assert rows[0] == pytest.approx([15 / 16, 1 / 16])
    expected = [15 / 16, 1 / 16] if fallback == "pair" else tables.class_dist[0]
    assert rows[1] == pytest.approx(expected)


def test_tables_are_stochastic(dynamics_data):
    X, y, lengths = dynamics_data
    for alpha in (1.0, 0.0):
        cfg = TreeTrainConfig(d=1, laplace_alpha=alpha)
        tree = grow_tree(X, y, lengths, 2, cfg, np.random.default_rng(1))
        tables = finalize_leaves(tree, X, y, lengths, 2, cfg)
        assert np.allclose(tables.class_dist.sum(axis=1), 1.0, atol=1e-9)
        assert tables.trans_dist
        for key, m in tables.trans_dist.items():
            assert np.allclose(m.sum(axis=1), 1.0, atol=1e-9)
            assert tables.support[key] >= cfg.min_transition_support


def test_split_params_rule():
    s = SplitParams(0, 1.0)
    X = np.array([[0.5], [1.0], [1.5]])
    assert classification_objectives(X, np.array([0, 0, 1]), 2, np.array([s.feature_index]),
                                     np.array([s.threshold]))[0] == 0.0
