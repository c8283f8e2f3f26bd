import io
import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.cluster import hierarchy
from scipy.spatial.distance import squareform

from conftest import blob_with_outliers, random_dissimilarity
from extremeregions.cluster import (
    UNASSIGNED, MergeTree, Partition, core_clusters, cut, cut_k, hierarchical, kmedoids,
    read_labels, write_labels,
)

LINK = {"single": min, "complete": max, "average": lambda v: sum(v) / len(v)}


def brute_force_heights(D, linkage):
    """Recompute every cluster-pair linkage from the raw matrix at each step."""
    clusters = [frozenset([i]) for i in range(len(D))]
    heights, history = [], []
    while len(clusters) > 1:
        best = None
        for a, b in itertools.combinations(range(len(clusters)), 2):
            v = LINK[linkage]([D[i, j] for i in clusters[a] for j in clusters[b]])
            if best is None or v < best[0]:
                best = (v, a, b)
        v, a, b = best
        merged = clusters[a] | clusters[b]
        clusters = [c for k, c in enumerate(clusters) if k not in (a, b)] + [merged]
        heights.append(v)
        history.append(set(clusters))
    return heights, history


@pytest.mark.parametrize("linkage", ["single", "complete", "average"])
@given(st.integers(2, 8), st.integers(0, 2**31))
def test_matches_brute_force(linkage, n, seed):
    D = random_dissimilarity(n, np.random.default_rng(seed))
    tree = hierarchical(D, linkage)
    heights, history = brute_force_heights(D, linkage)
    np.testing.assert_allclose(tree.heights, heights, atol=1e-12)
    for k, groups in enumerate(history):
        p = cut_k(tree, n - k - 1)
        assert p.as_sets() == {frozenset(str(i) for i in g) for g in groups}


@pytest.mark.parametrize("linkage", ["single", "complete", "average"])
def test_heights_agree_with_scipy(linkage):
    rng = np.random.default_rng(7)
    for n in (5, 30, 90):
        D = random_dissimilarity(n, rng)
        ours = hierarchical(D, linkage).heights
        ref = hierarchy.linkage(squareform(D), method=linkage)[:, 2]
        np.testing.assert_allclose(ours, ref, atol=1e-12)


def test_three_point_average_example():
    D = np.array([[0, 0.01, 0.10], [0.01, 0, 0.12], [0.10, 0.12, 0]])
    tree = hierarchical(D, "average", ["a", "b", "c"])
    assert tree.heights == pytest.approx([0.01, 0.11])
    assert cut(tree, 0.05).as_sets() == {frozenset("ab"), frozenset("c")}
    assert cut(tree, 0.11).n_clusters == 1


@given(st.integers(2, 40), st.integers(0, 2**31), st.sampled_from(["single", "complete", "average"]),
       st.floats(0, 1), st.floats(0, 1))
def test_heights_monotone_and_cuts_nested(n, seed, linkage, h1, h2):
    D = random_dissimilarity(n, np.random.default_rng(seed))
    tree = hierarchical(D, linkage)
    assert np.all(np.diff(tree.heights) >= 0)
    lo, hi = sorted((h1, h2))
    fine, coarse = cut(tree, lo).as_sets(), cut(tree, hi).as_sets()
    assert all(any(f <= c for c in coarse) for f in fine)
    assert cut(tree, 0.0).n_clusters == n - int((tree.heights <= 0).sum())
    assert cut(tree, 1.0).n_clusters == 1


def test_tied_dissimilarities_deterministic():
    D = np.ones((6, 6)) - np.eye(6)
    a, b = hierarchical(D), hierarchical(D)
    assert a.merges == b.merges
    assert (a.merges[0].left, a.merges[0].right) == (0, 1)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        hierarchical(np.array([[0, np.nan], [np.nan, 0]]))
    with pytest.raises(ValueError):
        hierarchical(np.array([[0, 1], [2, 0]]))
    with pytest.raises(ValueError):
        hierarchical(np.zeros((1, 1)))
    with pytest.raises(ValueError):
        hierarchical(np.zeros((3, 3)), "ward")


def test_tree_json_roundtrip():
    tree = hierarchical(random_dissimilarity(9, np.random.default_rng(0)), "complete", list("abcdefghi"))
    buf = io.StringIO()
    tree.dump(buf)
    back = MergeTree.load(io.StringIO(buf.getvalue()))
    assert back == tree


@given(st.integers(2, 9), st.integers(0, 2**31))
def test_kmedoids_k1_is_brute_force_optimum(n, seed):
    D = random_dissimilarity(n, np.random.default_rng(seed))
    p = kmedoids(D, 1)
    assert p.cost == pytest.approx(D.sum(axis=0).min())


@given(st.integers(3, 9), st.integers(0, 2**31), st.data())
def test_kmedoids_invariants(n, seed, data):
    D = random_dissimilarity(n, np.random.default_rng(seed))
    k = data.draw(st.integers(1, n))
    p = kmedoids(D, k, seed=seed)
    assert p.n_clusters == k and len(p.medoids) == k
    assert np.all(np.diff(p.cost_trace) <= 1e-12)
    ids = [str(i) for i in range(n)]
    med = [ids.index(m) for m in p.medoids]
    for i, s in enumerate(ids):
        lab = p.labels[s]
        assert D[i, med[lab - 1]] == pytest.approx(D[i, med].min())
    # every medoid is in its own cluster
    assert all(p.labels[m] == k_ + 1 for k_, m in enumerate(p.medoids))


def test_kmedoids_reproducible_with_restarts():
    D = random_dissimilarity(30, np.random.default_rng(4))
    assert kmedoids(D, 4, seed=9, n_restarts=3).labels == kmedoids(D, 4, seed=9, n_restarts=3).labels


def test_kmedoids_splits_blob_where_hierarchy_does_not():
    D = blob_with_outliers()
    blob = [str(i) for i in range(50)]
    h = cut_k(hierarchical(D, "average"), 5)
    pam = kmedoids(D, 5)
    assert len({h.labels[s] for s in blob}) == 1
    assert len({pam.labels[s] for s in blob}) >= 2


def test_core_clusters():
    p = Partition({"a": 1, "b": 1, "c": 2, "d": 3, "e": 3, "f": 3}, "hierarchical", 0.1)
    core = core_clusters(p, 2)
    assert core.labels == {"a": 1, "b": 1, "c": UNASSIGNED, "d": 2, "e": 2, "f": 2}
    assert core.n_clusters == 2


def test_labels_roundtrip():
    p = Partition({"x": 1, "y": 0, "z": 2}, "hierarchical")
    buf = io.StringIO()
    write_labels(p, buf)
    assert read_labels(io.StringIO(buf.getvalue())).labels == p.labels
