"""Grid clustering and graph coarsening."""

import numpy as np
import pytest

from sgcn.autodiff import Tensor
from sgcn.errors import SgcnError
from sgcn.gradsuite import _toy_graph
from sgcn.graphs import batch_graphs
from sgcn.pooling import grid_cluster, pool_graph


class TestGridCluster:
    def test_colocated_points_share_cluster(self):
        coords = Tensor(np.array([[0.01, 0.01], [0.02, 0.02], [0.03, 0.01], [0.04, 0.04]]))
        a = grid_cluster(coords, None, 0.05)
        assert a.num_clusters == 1
        np.testing.assert_array_equal(a.cluster_id, 0)

    def test_distinct_cells_no_merging(self):
        coords = Tensor(np.array([[0.0, 0.0], [0.5, 0.5], [0.9, 0.1]]))
        a = grid_cluster(coords, None, 0.1)
        assert a.num_clusters == 3

    def test_whole_domain_cell(self, rng):
        coords = Tensor(rng.uniform(size=(10, 2)))
        batch = np.repeat([0, 1], 5)
        a = grid_cluster(coords, batch, 1.0)
        assert a.num_clusters == 2  # one per graph

    def test_cross_graph_never_shared(self, rng):
        coords = Tensor(np.tile(rng.uniform(size=(4, 2)), (2, 1)))
        batch = np.repeat([0, 1], 4)
        a = grid_cluster(coords, batch, 0.05)
        first = set(a.cluster_id[:4].tolist())
        second = set(a.cluster_id[4:].tolist())
        assert not first & second

    def test_first_occurrence_order(self):
        coords = Tensor(np.array([[0.9, 0.9], [0.1, 0.1], [0.9, 0.9], [0.1, 0.1]]))
        a = grid_cluster(coords, None, 0.05)
        np.testing.assert_array_equal(a.cluster_id, [0, 1, 0, 1])

    def test_nonpositive_cell_rejected(self):
        with pytest.raises(SgcnError):
            grid_cluster(Tensor(np.zeros((1, 2))), None, 0.0)


class TestPoolGraph:
    def test_singleton_clusters_keep_graph(self, rng):
        g = _toy_graph(rng)
        feats = Tensor(rng.normal(size=(g.num_nodes, 3)), dtype=np.float64)
        a = grid_cluster(g.coords, None, 1e-6)  # every node its own cell
        coarse, cf = pool_graph(g, feats, a)
        assert coarse.num_nodes == g.num_nodes
        np.testing.assert_allclose(coarse.coords.data, g.coords.data, atol=1e-12)
        np.testing.assert_allclose(cf.data, feats.data, atol=1e-12)
        assert {tuple(e) for e in coarse.edges} == {tuple(e) for e in g.edges}

    def test_mean_coordinates(self):
        class Tiny:
            coords = Tensor(np.array([[0.1, 0.1], [0.3, 0.1]]), dtype=np.float64)
            edges = np.array([[0, 0], [1, 1], [0, 1], [1, 0]])
            num_nodes = 2
            batch_id = None

        feats = Tensor(np.array([[1.0], [5.0]]), dtype=np.float64)
        a = grid_cluster(Tiny.coords, None, 0.5)
        coarse, cf = pool_graph(Tiny(), feats, a)
        assert coarse.num_nodes == 1
        np.testing.assert_allclose(coarse.coords.data, [[0.2, 0.1]], atol=1e-12)
        np.testing.assert_array_equal(cf.data, [[5.0]])  # max mode

    def test_mean_feature_mode(self):
        class Tiny:
            coords = Tensor(np.array([[0.1, 0.1], [0.3, 0.1]]), dtype=np.float64)
            edges = np.array([[0, 0]])
            num_nodes = 2
            batch_id = None

        feats = Tensor(np.array([[1.0], [5.0]]), dtype=np.float64)
        a = grid_cluster(Tiny.coords, None, 0.5)
        _, cf = pool_graph(Tiny(), feats, a, feature_mode="mean")
        np.testing.assert_array_equal(cf.data, [[3.0]])

    def test_parallel_edges_dedup_matches_bruteforce(self, rng):
        for seed in range(5):
            r = np.random.default_rng(seed)
            g = _toy_graph(r, n=int(r.integers(6, 16)))
            feats = Tensor(r.normal(size=(g.num_nodes, 2)), dtype=np.float64)
            a = grid_cluster(g.coords, None, 0.15)
            coarse, _ = pool_graph(g, feats, a)
            # oracle: set-dedup of mapped cross-cluster edges plus self-loops
            mapped = {(int(a.cluster_id[s]), int(a.cluster_id[d]))
                      for s, d in g.edges if a.cluster_id[s] != a.cluster_id[d]}
            mapped |= {(c, c) for c in range(a.num_clusters)}
            assert {tuple(e) for e in coarse.edges} == mapped

    def test_coarse_count_shrinks_on_merge(self, rng):
        g = _toy_graph(rng, n=12)
        a = grid_cluster(g.coords, None, 0.5)
        assert a.num_clusters < g.num_nodes

    def test_max_features_dominate_members(self, rng):
        g = _toy_graph(rng, n=12)
        feats = Tensor(rng.normal(size=(12, 3)), dtype=np.float64)
        a = grid_cluster(g.coords, None, 0.3)
        _, cf = pool_graph(g, feats, a)
        for node in range(12):
            assert np.all(cf.data[a.cluster_id[node]] >= feats.data[node] - 1e-12)

    def test_coords_inside_member_bbox(self, rng):
        g = _toy_graph(rng, n=14)
        feats = Tensor(rng.normal(size=(14, 2)), dtype=np.float64)
        a = grid_cluster(g.coords, None, 0.25)
        coarse, _ = pool_graph(g, feats, a)
        for c in range(a.num_clusters):
            members = g.coords.data[a.cluster_id == c]
            assert np.all(coarse.coords.data[c] >= members.min(axis=0) - 1e-12)
            assert np.all(coarse.coords.data[c] <= members.max(axis=0) + 1e-12)

    def test_batched_pooling_no_cross_graph_edges(self, rng):
        gs = [_toy_graph(np.random.default_rng(s), n=10) for s in range(3)]
        batch = batch_graphs(gs)
        feats = Tensor(rng.normal(size=(batch.num_nodes, 2)), dtype=np.float64)
        a = grid_cluster(batch.coords, batch.batch_id, 0.2)
        coarse, _ = pool_graph(batch, feats, a)
        src_g = coarse.batch_id[coarse.edges[:, 0]]
        dst_g = coarse.batch_id[coarse.edges[:, 1]]
        np.testing.assert_array_equal(src_g, dst_g)
        assert all(b >= 0 for b in coarse.graph_sizes)
        assert sum(coarse.graph_sizes) == coarse.num_nodes
        d = np.diff(coarse.batch_id)
        assert np.all(d >= 0)  # non-decreasing
