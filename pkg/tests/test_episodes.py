import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fewshot_kd.episodes import (
    Dataset,
    episode_accuracies,
    evaluate_accuracy,
    nearest_centroid_classify,
    sample_episode,
    summarize,
)
from fewshot_kd.rng import CounterRNG


def make_dataset(n_classes=20, per_class=10, dim=3, seed=0, split="base", spread=1.0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(n_classes), per_class)
    feats = spread * rng.standard_normal((len(labels), dim))
    return Dataset(feats, labels, {c: split for c in range(n_classes)})


def check_episode(ep, ds, split, n_way, k_shot, q):
    assert len(set(ep.class_map)) == n_way
    assert all(ds.splits[c] == split for c in ep.class_map)
    assert len(ep.support) == n_way * k_shot and len(ep.query) == n_way * q
    assert not set(ep.support.tolist()) & set(ep.query.tolist())
    assert len(set(ep.support.tolist())) == len(ep.support) and len(set(ep.query.tolist())) == len(ep.query)
    for idx, lab in [(ep.support, ep.support_labels), (ep.query, ep.query_labels)]:
        assert np.array_equal(ds.labels[idx], np.asarray(ep.class_map)[lab])
    assert np.array_equal(np.bincount(ep.support_labels, minlength=n_way), [k_shot] * n_way)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), [0, 1], {0: "base"})
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), [0, 1], {0: "base", 1: "test"})
    with pytest.raises(ValueError):
        Dataset(np.array([[0.0, np.nan]]), [0], {0: "base"})
    ds = Dataset(np.zeros((3, 2)), [2, 0, 1], {0: "base", 1: "val", 2: "novel"})
    assert (ds.n_base, ds.n_val, ds.n_novel) == (1, 1, 1)
    assert ds.split_indices("val").tolist() == [2]


def test_exact_capacity_episode_uses_every_sample_once():
    ds = make_dataset(n_classes=5, per_class=4)
    ep = sample_episode(ds, "base", 5, 1, 3, CounterRNG(0))
    assert sorted(np.concatenate([ep.support, ep.query]).tolist()) == list(range(20))
    check_episode(ep, ds, "base", 5, 1, 3)


def test_sampling_is_deterministic():
    ds = make_dataset()
    a = sample_episode(ds, "base", 5, 2, 3, CounterRNG(4))
    b = sample_episode(ds, "base", 5, 2, 3, CounterRNG(4))
    assert a == b
    assert a != sample_episode(ds, "base", 5, 2, 3, CounterRNG(5))


@given(st.integers(2, 8), st.integers(1, 4), st.integers(0, 5), st.integers(0, 2**32))
@settings(max_examples=100, deadline=None)
def test_episode_invariants(n_way, k_shot, q, seed):
    ds = make_dataset(n_classes=10, per_class=9)
    check_episode(sample_episode(ds, "base", n_way, k_shot, q, CounterRNG(seed)), ds, "base", n_way, k_shot, q)


def test_deficits_are_named():
    ds = make_dataset(n_classes=4, per_class=5)
    with pytest.raises(ValueError, match="needs 1 more"):
        sample_episode(ds, "base", 5, 1, 1, CounterRNG(0))
    with pytest.raises(ValueError, match="deficit"):
        sample_episode(ds, "base", 2, 3, 3, CounterRNG(0))
    with pytest.raises(ValueError):
        sample_episode(ds, "novel", 2, 1, 1, CounterRNG(0))


def test_class_selection_frequency_uniform():
    ds = make_dataset(n_classes=20, per_class=4)
    counts = np.zeros(20)
    root = CounterRNG(2024)
    n = 10_000
    for e in range(n):
        counts[sample_episode(ds, "base", 5, 1, 1, root.child(e)).class_map] += 1
    p = 5 / 20
    assert np.all(np.abs(counts - n * p) <= 3 * np.sqrt(n * p * (1 - p)))


def test_nearest_centroid_examples():
    protos = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
    assert nearest_centroid_classify([0.0, 4.0], protos)[0] == 2
    assert nearest_centroid_classify([2.0, 0.0], protos)[0] == 0
    with pytest.raises(ValueError):
        nearest_centroid_classify([0.0], np.empty((0, 1)))


def test_nearest_centroid_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        k, d = int(rng.integers(1, 8)), int(rng.integers(1, 5))
        protos = rng.integers(-3, 4, size=(k, d)).astype(float)  # integer grid makes ties common
        q = rng.integers(-3, 4, size=d).astype(float)
        best, best_d = 0, np.inf
        for j in range(k):
            dist = np.sum((q - protos[j]) ** 2)
            if dist < best_d:
                best, best_d = j, dist
        assert nearest_centroid_classify(q, protos)[0] == best


@given(st.integers(0, 10_000))
@settings(max_examples=50)
def test_nearest_centroid_invariances(seed):
    rng = np.random.default_rng(seed)
    protos, q = rng.standard_normal((4, 3)), rng.standard_normal(3)
    label, d = nearest_centroid_classify(q, protos)
    shift = rng.standard_normal(3)
    assert nearest_centroid_classify(q + shift, protos + shift)[0] == label
    far = q + (d.max() + 1.0) * np.array([1.0, 0.0, 0.0])
    assert nearest_centroid_classify(q, np.vstack([protos, far]))[0] == label


def test_separable_clusters_score_perfectly():
    labels = np.repeat(np.arange(6), 20)
    feats = 100.0 * np.eye(6)[labels] + np.random.default_rng(0).standard_normal((120, 6))
    ds = Dataset(feats, labels, {c: "novel" for c in range(6)})
    mean, ci = evaluate_accuracy(None, ds, "novel", 20, 5, 1, 5, CounterRNG(0))
    assert mean == 1.0 and ci == 0.0


def test_random_labels_are_at_chance():
    ds = make_dataset(n_classes=10, per_class=30, seed=3, split="novel")
    mean, ci = evaluate_accuracy(None, ds, "novel", 400, 5, 1, 15, CounterRNG(1))
    assert abs(mean - 0.2) <= max(ci, 0.02)


def test_evaluation_deterministic_and_thread_independent():
    ds = make_dataset(n_classes=10, per_class=20, split="novel")
    a = episode_accuracies(ds.features, ds, "novel", 50, 5, 1, 5, CounterRNG(7))
    b = episode_accuracies(ds.features, ds, "novel", 50, 5, 1, 5, CounterRNG(7), threads=4)
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        evaluate_accuracy(None, ds, "novel", 1, 5, 1, 5, CounterRNG(0))


def test_summarize():
    mean, ci = summarize(np.array([0.0, 1.0]))
    assert mean == 0.5 and ci == pytest.approx(1.96 * np.sqrt(0.5) / np.sqrt(2))
    with pytest.raises(ValueError):
        summarize(np.array([1.0]))
