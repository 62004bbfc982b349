import time

import numpy as np
import pytest

from transition_forests.forest import ForestConfig, ForestTree, TransitionForest
from transition_forests.inference import (
    DetectionEvent,
    DetectorParams,
    PredictionContext,
    ScoreDetector,
    classify_sequence,
    detect_online,
    detect_scores,
    predict_frame,
    predict_sequence,
    transition_probability,
)
from transition_forests.tree import LeafTables, TransitionTree

from conftest import single_leaf_forest

LEAF0 = np.array([0])
LEAVES2 = np.array([0, 0])


def test_uniform_row():
    f = single_leaf_forest([[0.9, 0.1]], rows=[[[0.5, 0.5], [0.5, 0.5]]], distances=[1])
    assert transition_probability(f, 1, LEAF0, LEAF0, prev_label=0).tolist() == [0.5, 0.5]


def test_missing_entries_fall_back_to_class_dist():
    f = single_leaf_forest([[0.6, 0.4], [0.2, 0.8]], distances=[1, 1])
    assert transition_probability(f, 1, LEAVES2, LEAVES2, prev_label=1) == pytest.approx([0.4, 0.6])


def test_rows_are_averaged():
    f = single_leaf_forest([[0.5, 0.5], [0.5, 0.5]],
                           rows=[[[1, 0], [0, 1]], [[0.5, 0.5], [0.5, 0.5]]], distances=[1, 1])
    assert transition_probability(f, 1, LEAVES2, LEAVES2, prev_label=0) == pytest.approx([0.75, 0.25])


def test_soft_previous_label():
    f = single_leaf_forest([[0.5, 0.5]], rows=[[[1, 0], [0.2, 0.8]]], distances=[1])
    p = transition_probability(f, 1, LEAF0, LEAF0, prev_probs=np.array([0.5, 0.5]))
    assert p == pytest.approx([0.6, 0.4])


def test_transition_probability_errors():
    f = single_leaf_forest([[0.5, 0.5]], distances=[1])
    with pytest.raises(ValueError):
        transition_probability(f, 2, LEAF0, LEAF0, prev_label=0)
    with pytest.raises(ValueError):
        transition_probability(f, 1, LEAF0, LEAF0)


def test_product_with_uniform_transition_is_identity():
    f = single_leaf_forest([[0.8, 0.2]], rows=[[[0.5, 0.5], [0.5, 0.5]]], distances=[1])
    posts = predict_sequence(f, np.zeros((2, 1)))
    assert posts[1].probs == pytest.approx([0.8, 0.2], abs=1e-12)


def test_product_renormalised():
    f = single_leaf_forest([[0.6, 0.4]], rows=[[[0.25, 0.75], [0.25, 0.75]]], distances=[1])
    first, second = predict_sequence(f, np.zeros((2, 1)))
    assert first.probs == pytest.approx([0.6, 0.4], abs=1e-12)
    assert second.probs == pytest.approx([1 / 3, 2 / 3], abs=1e-12)
    assert second.argmax_label == 1 and second.time_index == 1


def test_warm_up_uses_available_distances():
    # at t = 1 only d = 1 is available, from t = 2 both are averaged
    f = single_leaf_forest([[0.5, 0.5], [0.5, 0.5]],
                           rows=[[[0.2, 0.8], [0.2, 0.8]], [[0.6, 0.4], [0.6, 0.4]]], distances=[1, 2])
    posts = predict_sequence(f, np.zeros((3, 1)))
    assert posts[0].probs == pytest.approx([0.5, 0.5])
    assert posts[1].probs == pytest.approx([0.2, 0.8])
    assert posts[2].probs == pytest.approx([0.4, 0.6])


def test_rf_mode_is_mean_class_distribution(small_split):
    from transition_forests.forest import train_forest_features

    train, test = small_split
    f = train_forest_features(train, ["a", "b"], ForestConfig(num_trees=4, temporal_order=0))
    for x in test[0].vectors:
        expected = np.mean([t.tables.class_dist[t.tree.route(x)] for t in f.trees], axis=0)
        got = predict_frame(f, x, PredictionContext(0)).probs
        assert np.allclose(got, expected / expected.sum(), rtol=0, atol=1e-15)


def test_posteriors_are_distributions(small_split, small_forest):
    _, test = small_split
    for seq in test[:5]:
        for soft in (False, True):
            for p in predict_sequence(small_forest, seq.vectors, soft):
                assert abs(p.probs.sum() - 1.0) <= 1e-9
                assert (p.probs >= 0).all()
                assert p.argmax_label == int(np.argmax(p.probs))


def test_prediction_is_causal(small_split, small_forest):
    _, test = small_split
    vectors = test[1].vectors
    full = predict_sequence(small_forest, vectors)
    for n in (1, 2, 3, 10, len(vectors) - 1):
        prefix = predict_sequence(small_forest, vectors[:n])
        assert all(a.probs.tobytes() == b.probs.tobytes() for a, b in zip(prefix, full[:n]))


def test_context_ring_buffer():
    ctx = PredictionContext(2)
    for i in range(5):
        ctx.push(i)
    assert list(ctx.records) == [3, 4]
    assert ctx.previous(1) == 4 and ctx.previous(2) == 3 and ctx.previous(3) is None
    ctx.reset()
    assert ctx.t == 0 and ctx.previous(1) is None


def _two_leaf_forest():
    tables = LeafTables(np.array([[1.0, 0.0], [0.0, 1.0]]))
    tree = ForestTree(TransitionTree([0, 1, 2], [0, -1, -1], [0.5, 0.0, 0.0], 1), tables, None)
    return TransitionForest([tree], ["a", "b"], 1, ForestConfig(num_trees=1, temporal_order=0))


def test_classify_tie_goes_to_lowest_label():
    label, posts = classify_sequence(_two_leaf_forest(), np.array([[0.0], [1.0]]))
    assert [p.probs.tolist() for p in posts] == [[1.0, 0.0], [0.0, 1.0]]
    assert label == 0


def test_classify_single_frame_and_empty():
    assert classify_sequence(_two_leaf_forest(), np.array([[1.0]]))[0] == 1
    with pytest.raises(ValueError):
        classify_sequence(_two_leaf_forest(), np.zeros((0, 1)))


def test_classify_is_mean_of_frame_posteriors(small_split, small_forest):
    _, test = small_split
    for seq in test[:6]:
        label, posts = classify_sequence(small_forest, seq.vectors)
        mean = sum(p.probs for p in posts) / len(posts)
        assert label == int(np.argmax(mean))


# -- detector


def test_detector_running_mean_end():
    stream = [[0.9, 0.1]] * 50 + [[0.0, 1.0]] * 300
    events = detect_scores(stream, background=1)
    # the mean 45 / (50 + n) first drops below 0.16 at n = 232 zero frames, i.e. frame 281
    assert len(events) == 1
    e = events[0]
    assert (e.label, e.start_frame, e.end_frame) == (0, 0, 280)
    assert e.mean_score == pytest.approx(45 / 282)
    assert 45 / 281 >= 0.16


def test_detector_never_starts():
    stream = np.random.default_rng(0).uniform(0, 0.79, size=(200, 3))
    assert detect_scores(stream) == []


def test_detector_degenerate_thresholds():
    stream = np.random.default_rng(1).dirichlet(np.ones(3), size=40)
    events = detect_scores(stream, DetectorParams(0.0, 0.0))
    assert len(events) == 1
    assert (events[0].start_frame, events[0].end_frame) == (0, 39)


def test_detector_ignores_background_and_min_length():
    stream = [[0.0, 1.0]] * 10 + [[0.95, 0.05]] * 3 + [[0.0, 1.0]] * 40
    assert detect_scores(stream, background=1) != []
    assert detect_scores(stream, DetectorParams(min_event_len=20), background=1) == []
    assert detect_scores([[0.05, 0.95]] * 10, background=1) == []


def test_detector_params_validation():
    with pytest.raises(ValueError):
        DetectorParams(0.1, 0.5)
    with pytest.raises(ValueError):
        DetectorParams(min_event_len=0)


def test_detector_events_disjoint_random():
    rng = np.random.default_rng(2)
    for _ in range(20):
        stream = rng.dirichlet(np.full(4, 0.2), size=300)
        events = detect_scores(stream, DetectorParams(0.6, 0.3), background=3)
        for e in events:
            assert e.start_frame <= e.end_frame and e.label != 3
        for a, b in zip(events, events[1:]):
            assert a.end_frame < b.start_frame


def test_detect_online_streams_one_posterior_per_frame(small_split, small_forest):
    _, test = small_split
    frames = np.concatenate([s.vectors for s in test[:4]])
    out = list(detect_online(small_forest, frames, DetectorParams(0.6, 0.4)))
    posts = [p for p, _ in out if p is not None]
    events = [e for _, e in out if e is not None]
    assert len(posts) == len(frames)
    assert events == detect_scores([p.probs for p in posts], DetectorParams(0.6, 0.4))


def test_score_detector_flush():
    det = ScoreDetector(DetectorParams())
    det.update([1.0, 0.0])
    det.update([1.0, 0.0])
    assert det.flush() == DetectionEvent(0, 0, 1, 1.0)
    assert det.flush() is None


def test_per_frame_cost_flat_in_stream_length(small_forest):
    rng = np.random.default_rng(3)
    X = rng.normal(size=(4000, small_forest.feature_dim))

    def per_frame(n):
        ctx = PredictionContext(small_forest.k)
        t0 = time.perf_counter()
        for x in X[:n]:
            predict_frame(small_forest, x, ctx)
        return (time.perf_counter() - t0) / n

    per_frame(200)
    short, long = per_frame(500), per_frame(4000)
    assert long < 3 * short
