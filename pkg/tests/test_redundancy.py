import numpy as np
import pytest

from conftest import random_graph
from gnnrec.graph import from_edges
from gnnrec.models import ModelConfig
from gnnrec.redundancy import (batch_redundancy, item_vertex,
                               max_batch_under_budget,
                               redundancy_from_groups, subgraph_footprint)


def path_graph():
    """u0 - i0 - u1 - i1: users {0,1} = global {0,1}, items {0,1} = {2,3}."""
    return from_edges([0, 1, 1], [0, 0, 1])


def connected_random_graph(rng, nu, ni, extra_edges):
    """Random bipartite graph guaranteed connected (zigzag spine + extras)."""
    spine_u = np.repeat(np.arange(nu), 2)[:nu + ni - 1]
    spine_i = np.repeat(np.arange(ni), 2)[1:nu + ni]
    n = min(spine_u.size, spine_i.size)
    users = np.concatenate([spine_u[:n], rng.integers(0, nu, extra_edges)])
    items = np.concatenate([spine_i[:n], rng.integers(0, ni, extra_edges)])
    return from_edges(users, items, num_users=nu, num_items=ni)


class TestSubgraphFootprint:
    def test_path_full_reach(self):
        g = path_graph()
        fp = subgraph_footprint(g, [item_vertex(g, 0)], 2)
        assert fp.vertices == 4
        assert fp.edges == 3

    def test_path_partial_reach(self):
        g = path_graph()
        fp = subgraph_footprint(g, [item_vertex(g, 1)], 2)
        assert fp.vertices == 3

    def test_zero_layers(self):
        g = path_graph()
        fp = subgraph_footprint(g, [item_vertex(g, 0)], 0)
        assert fp.vertices == 1 and fp.edges == 0

    def test_sampling_noop_above_max_degree(self, rng):
        g = random_graph(rng, 10, 8, 40)
        maxdeg = int(max(g.degrees("user").max(), g.degrees("item").max()))
        full = subgraph_footprint(g, [0, 1], 2)
        sampled = subgraph_footprint(g, [0, 1], 2, sampling_factor=maxdeg,
                                     rng=3)
        assert (sampled.vertices, sampled.edges) == (full.vertices, full.edges)

    def test_bad_target(self):
        g = path_graph()
        with pytest.raises(ValueError, match="vertex id space"):
            subgraph_footprint(g, [99], 1)

    def test_containment_fuzz(self, rng):
        for trial in range(30):
            g = random_graph(rng, 12, 10, 45)
            targets = rng.choice(22, size=3, replace=False).tolist()
            prev_v, prev_e = 0, 0
            for layers in range(4):
                fp = subgraph_footprint(g, targets, layers, rng=trial)
                assert fp.vertices >= prev_v and fp.edges >= prev_e
                prev_v, prev_e = fp.vertices, fp.edges
                sampled = subgraph_footprint(g, targets, layers,
                                             sampling_factor=2, rng=trial)
                assert sampled.vertices <= fp.vertices
                assert sampled.edges <= fp.edges

    def test_deterministic(self, rng):
        g = random_graph(rng, 10, 10, 50)
        a = subgraph_footprint(g, [0, 5], 3, sampling_factor=2, rng=7)
        b = subgraph_footprint(g, [0, 5], 3, sampling_factor=2, rng=7)
        assert (a.vertices, a.edges, a.estimated_bytes) == \
            (b.vertices, b.edges, b.estimated_bytes)


class TestRedundancyRatio:
    def test_path_hand_case(self):
        g = path_graph()
        report = redundancy_from_groups(
            g, [[item_vertex(g, 0)], [item_vertex(g, 1)]], 2)
        assert [fp.vertices for fp in report.footprints] == [4, 3]
        assert report.ratio_vertices == pytest.approx(1.75)

    def test_single_worker_is_one(self, rng):
        g = random_graph(rng, 10, 10, 40)
        report = batch_redundancy(g, 4, 1, 2, rng=0)
        assert report.ratio_vertices == pytest.approx(1.0)
        assert report.ratio_edges == pytest.approx(1.0)

    def test_ratio_at_least_one_fuzz(self, rng):
        for trial in range(25):
            g = random_graph(rng, 14, 12, 60)
            workers = int(rng.integers(1, 5))
            batch = int(rng.integers(1, 1 + g.num_edges // workers))
            layers = int(rng.integers(0, 4))
            report = batch_redundancy(g, batch, workers, layers, rng=trial)
            assert report.ratio_vertices >= 1.0
            assert report.ratio_edges >= 1.0 - 1e-12

    def test_ratio_nondecreasing_in_layers_on_connected(self, rng):
        # on connected random graphs worker neighborhoods only grow toward
        # each other, so overlap (and the ratio) grows with depth
        for trial in range(20):
            g = connected_random_graph(rng, 10, 9, 25)
            report_by_layer = [
                batch_redundancy(g, 2, 2, layers, rng=trial)
                for layers in range(4)]
            ratios = [r.ratio_vertices for r in report_by_layer]
            assert all(a <= b + 1e-9 for a, b in zip(ratios, ratios[1:]))

    def test_too_many_targets_rejected(self):
        g = path_graph()
        with pytest.raises(ValueError, match="target edges"):
            batch_redundancy(g, 10, 2, 1)


class TestMaxBatch:
    def config(self, layers=2, dim=8):
        return ModelConfig(model="lightgcn", num_layers=layers, embed_dim=dim)

    def test_unconstrained_budget_allows_all_targets(self, rng):
        g = random_graph(rng, 12, 10, 50)
        full = subgraph_footprint(g, range(22), 2, model_dim=8)
        budget = 4 * full.estimated_bytes * 2
        assert max_batch_under_budget(g, self.config(), budget, 2) == g.num_edges

    def test_tiny_budget_returns_zero(self, rng):
        g = random_graph(rng, 12, 10, 50)
        assert max_batch_under_budget(g, self.config(), 8, 2) == 0

    def test_monotone_in_budget_fuzz(self, rng):
        g = random_graph(rng, 12, 10, 50)
        cfg = self.config()
        budgets = sorted(int(b) for b in rng.integers(10**2, 10**7, 8))
        results = [max_batch_under_budget(g, cfg, b, 2, seed=3)
                   for b in budgets]
        assert all(a <= b for a, b in zip(results, results[1:]))

    def test_deterministic(self, rng):
        g = random_graph(rng, 12, 10, 50)
        cfg = self.config()
        a = max_batch_under_budget(g, cfg, 10**6, 3, seed=5)
        b = max_batch_under_budget(g, cfg, 10**6, 3, seed=5)
        assert a == b
