import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asmpose.spatial import KdTree
from oracles import brute_knn, brute_radius


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 300), st.integers(1, 12))
def test_knn_matches_exhaustive(seed, n, k):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(n, 3))
    tree = KdTree(data)
    for q in rng.normal(size=(5, 3)):
        got = tree.knn(q, k)
        want = brute_knn(data, q, k)
        assert [i for i, _ in got] == [i for i, _ in want]
        assert np.allclose([d for _, d in got], [d for _, d in want], rtol=0, atol=1e-12)


def test_knn_ties_break_by_index():
    data = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, 0, 5.0]])
    assert [i for i, _ in KdTree(data).knn(np.zeros(3), 3)] == [0, 1, 2]
    dup = np.zeros((5, 3))
    assert [i for i, _ in KdTree(dup).knn(np.zeros(3), 2)] == [0, 1]


def test_knn_small_tree_and_empty_tree():
    tree = KdTree(np.eye(3))
    assert len(tree.knn(np.zeros(3), 10)) == 3
    assert KdTree(np.zeros((0, 3))).knn(np.zeros(3), 2) == []
    with pytest.raises(ValueError):
        tree.knn(np.zeros(3), 0)
    with pytest.raises(ValueError):
        tree.knn(np.zeros(2), 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 1.5))
def test_radius_search_matches_exhaustive(seed, r):
    rng = np.random.default_rng(seed)
    data = rng.uniform(-1, 1, size=(200, 3))
    q = rng.uniform(-1, 1, size=3)
    got = KdTree(data).radius_search(q, r)
    want = brute_radius(data, q, r)
    assert [i for i, _ in got] == [i for i, _ in want]


def test_radius_inclusive():
    data = np.array([[1.0, 0, 0], [2.0, 0, 0]])
    assert [i for i, _ in KdTree(data).radius_search(np.zeros(3), 1.0)] == [0]


def test_batch_query_with_bound():
    rng = np.random.default_rng(2)
    data = rng.normal(size=(100, 3))
    q = rng.normal(size=(20, 3))
    tree = KdTree(data)
    idx, dist = tree.query(q, k=4, max_distance=0.5)
    for row in range(len(q)):
        want = [(i, d) for i, d in brute_knn(data, q[row], 4) if d <= 0.5]
        got = [(int(i), float(d)) for i, d in zip(idx[row], dist[row]) if np.isfinite(d)]
        assert [i for i, _ in got] == [i for i, _ in want]
        assert np.all(idx[row][~np.isfinite(dist[row])] == tree.size)


def test_descriptor_space():
    rng = np.random.default_rng(5)
    data = rng.random((300, 33))
    q = rng.random(33)
    tree = KdTree(data, dimension=33)
    assert [i for i, _ in tree.knn(q, 5)] == [i for i, _ in brute_knn(data, q, 5)]
    with pytest.raises(ValueError):
        KdTree(data, dimension=3)
    with pytest.raises(ValueError):
        KdTree(np.array([[np.inf, 0, 0]]))
