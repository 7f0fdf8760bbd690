import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from nsnmf.graph import (
    EdgeList,
    MstDistance,
    build_complete_graph,
    local_mst_similarity,
    minimum_spanning_tree,
    mst_from_points,
    mst_similarity,
    read_edge_list,
    similarity_from_mst,
    write_edge_list,
)
from oracles import brute_force_mst_weight, is_spanning_tree, pairwise_distances


def edge_dict(edges: EdgeList):
    return {(a, b): w for a, b, w in edges.triples()}


class TestCompleteGraph:
    def test_three_four_five(self):
        g = build_complete_graph([[0, 0], [3, 4]])
        assert edge_dict(g) == {(0, 1): 5.0}

    def test_three_collinear_points(self):
        g = build_complete_graph([[0, 0], [0, 1], [0, 3]])
        assert edge_dict(g) == {(0, 1): 1.0, (1, 2): 2.0, (0, 2): 3.0}

    def test_identical_rows_give_zero_weight(self):
        assert edge_dict(build_complete_graph([[1, 2], [1, 2]])) == {(0, 1): 0.0}

    def test_edge_count_and_weights(self, rng):
        A = rng.random((9, 4))
        g = build_complete_graph(A)
        assert len(g) == 9 * 8 // 2
        D = pairwise_distances(A)
        assert_allclose(g.weight, D[g.i, g.j], rtol=1e-14)

    def test_single_row_rejected(self):
        with pytest.raises(ValueError):
            build_complete_graph([[1.0, 2.0]])


class TestMinimumSpanningTree:
    def test_three_node_graph(self):
        g = EdgeList.from_triples([(0, 1, 1.0), (1, 2, 2.0), (0, 2, 3.0)])
        m = minimum_spanning_tree(g, 3)
        assert edge_dict(m.edges) == {(0, 1): 1.0, (1, 2): 2.0}
        assert m.total_weight == 3.0

    def test_two_node_graph(self):
        m = minimum_spanning_tree(EdgeList.from_triples([(0, 1, 4.5)]), 2)
        assert m.edges.triples() == [(0, 1, 4.5)]

    def test_eight_nodes_fifteen_edges(self, rng):
        # a ring plus seven chords keeps the graph connected
        ring = [(v, (v + 1) % 8) for v in range(8)]
        chords = [(0, 4), (1, 5), (2, 6), (3, 7), (0, 2), (4, 6), (1, 3)]
        g = EdgeList.from_triples([(a, b, float(w)) for (a, b), w in zip(ring + chords, rng.random(15))])
        assert len(g) == 15
        m = minimum_spanning_tree(g, 8)
        assert len(m.edges) == 7
        assert is_spanning_tree(8, zip(m.edges.i.tolist(), m.edges.j.tolist()))

    def test_disconnected_graph_names_node(self):
        g = EdgeList.from_triples([(0, 1, 1.0), (2, 3, 1.0)])
        with pytest.raises(ValueError, match="node 2"):
            minimum_spanning_tree(g, 4)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_enumeration(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(2, 8))
        A = r.random((n, int(r.integers(1, 4))))
        m = minimum_spanning_tree(build_complete_graph(A), n)
        assert m.total_weight == pytest.approx(brute_force_mst_weight(pairwise_distances(A)), rel=1e-12)
        assert is_spanning_tree(n, zip(m.edges.i.tolist(), m.edges.j.tolist()))

    @pytest.mark.parametrize("seed", range(10))
    def test_dense_prim_selects_same_tree_under_ties(self, seed):
        # integer grids produce many equal distances
        A = np.random.default_rng(seed).integers(0, 3, size=(30, 2)).astype(float)
        heap = minimum_spanning_tree(build_complete_graph(A), 30)
        dense = mst_from_points(A)
        assert heap.edges.triples() == dense.edges.triples()

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(2, 25), st.integers(1, 4)),
                  elements=st.floats(0, 100, allow_nan=False)))
    def test_dense_prim_is_a_minimum_tree(self, A):
        n = len(A)
        dense = mst_from_points(A)
        heap = minimum_spanning_tree(build_complete_graph(A), n)
        assert is_spanning_tree(n, zip(dense.edges.i.tolist(), dense.edges.j.tolist()))
        assert dense.total_weight == pytest.approx(heap.total_weight, rel=1e-12, abs=1e-12)


class TestSimilarity:
    def test_reciprocal(self):
        m = MstDistance(2, EdgeList.from_triples([(0, 1, 2.0)]))
        assert similarity_from_mst(m).S[0, 1] == 0.5

    def test_three_node_tree(self):
        s = similarity_from_mst(MstDistance(3, EdgeList.from_triples([(0, 1, 1.0), (1, 2, 2.0)])))
        S = s.S.toarray()
        assert S[0, 1] == 1.0 and S[1, 2] == 0.5 and S[0, 2] == 0.0
        assert_allclose(S, S.T)
        assert np.all(np.diag(S) == 0)
        assert_allclose(s.degree, [1.0, 1.5, 0.5])

    def test_sparsity_and_round_trip(self, rng):
        A = rng.random((40, 3))
        m = mst_from_points(A)
        s = similarity_from_mst(m)
        assert s.S.nnz == 2 * (40 - 1)
        M = m.matrix
        back = s.S.copy()
        back.data = 1.0 / back.data
        assert_allclose(back.toarray(), M.toarray(), rtol=1e-14)

    def test_duplicates_capped_at_closest_distinct_pair(self, caplog):
        A = np.array([[0.0], [0.0], [0.5], [2.0]])
        with caplog.at_level(logging.WARNING):
            S = mst_similarity(A).S.toarray()
        assert np.all(np.isfinite(S))
        assert S[0, 1] == pytest.approx(2.0)  # shortest positive edge is 0.5
        assert "zero-length" in caplog.text

    def test_explicit_duplicate_length(self):
        S = mst_similarity(np.array([[0.0], [0.0], [3.0]]), duplicate_length=0.1).S.toarray()
        assert S[0, 1] == pytest.approx(10.0)

    def test_all_rows_identical(self):
        S = mst_similarity(np.ones((4, 2))).S.toarray()
        assert np.all(np.isfinite(S)) and S.max() == 1.0


class TestLocalMst:
    def test_three_point_buffer(self):
        s = local_mst_similarity(np.array([[0.0, 0], [0, 1], [0, 3]]), newest_index=2)
        assert_allclose(s, [0.0, 0.5, 0.0])

    def test_whole_dataset_window_matches_global_row(self, rng):
        A = rng.random((15, 3))
        S = mst_similarity(A).S.toarray()
        for d in (0, 7, 14):
            assert_allclose(local_mst_similarity(A, d), S[d])

    def test_duplicate_newest_point_is_finite(self):
        s = local_mst_similarity(np.array([[1.0, 1], [0, 0], [1, 1]]))
        assert np.all(np.isfinite(s)) and s.max() > 0

    def test_single_row_buffer_rejected(self):
        with pytest.raises(ValueError):
            local_mst_similarity(np.ones((1, 3)))


def test_edge_list_dump_round_trip(tmp_path, rng):
    m = mst_from_points(rng.random((12, 2)))
    path = tmp_path / "tree.txt"
    write_edge_list(m, path)
    back = read_edge_list(path, 12)
    assert back.edges.triples() == m.edges.triples()


def test_edge_list_validation():
    with pytest.raises(ValueError):
        EdgeList.from_triples([(1, 1, 1.0)])
    with pytest.raises(ValueError):
        EdgeList.from_triples([(0, 1, -1.0)])
    with pytest.raises(ValueError):
        EdgeList.from_triples([(0, 1, 1.0), (1, 0, 2.0)])
