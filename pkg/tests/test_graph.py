import numpy as np
import pytest

from conftest import random_graph
from gnnrec.graph import (BipartiteGraph, DegreeHistogram, GraphError,
                          degree_histogram, from_edges, load_edge_list,
                          loglog_slope, memory_footprint_estimate,
                          split_train_test)


def write(tmp_path, text, name="edges.txt"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestLoadEdgeList:
    def test_basic_readback(self, tmp_path):
        g = load_edge_list(write(tmp_path, "0\t0\n0\t1\n1\t0\n"))
        assert (g.num_users, g.num_items, g.num_edges) == (2, 2, 3)
        assert g.has_edge_set() == {(0, 0), (0, 1), (1, 0)}

    def test_duplicates_removed(self, tmp_path):
        g = load_edge_list(write(tmp_path, "0\t0\n0\t0\n"))
        assert g.num_edges == 1

    def test_parse_error_names_line(self, tmp_path):
        with pytest.raises(GraphError, match=":1:"):
            load_edge_list(write(tmp_path, "0\tx\n"))

    def test_error_line_number_skips_comments(self, tmp_path):
        with pytest.raises(GraphError, match=":3:"):
            load_edge_list(write(tmp_path, "# header\n0\t0\nbroken\n"))

    def test_empty_is_error(self, tmp_path):
        with pytest.raises(GraphError, match="empty"):
            load_edge_list(write(tmp_path, "# nothing\n"))

    def test_extra_columns_ignored(self, tmp_path):
        g = load_edge_list(write(tmp_path, "0\t0\t5.0\t1234567\n1\t1\t3.0\n"))
        assert g.num_edges == 2

    def test_counts_follow_max_id(self, tmp_path):
        g = load_edge_list(write(tmp_path, "0 5\n2 1\n"))
        assert (g.num_users, g.num_items) == (3, 6)

    def test_compaction_remaps_and_keeps_mapping(self, tmp_path):
        g = load_edge_list(write(tmp_path, "10 100\n20 300\n"), compact_ids=True)
        assert (g.num_users, g.num_items, g.num_edges) == (2, 2, 2)
        assert g.user_ids.tolist() == [10, 20]
        assert g.item_ids.tolist() == [100, 300]

    def test_negative_id_rejected(self, tmp_path):
        with pytest.raises(GraphError, match="negative"):
            load_edge_list(write(tmp_path, "-1\t0\n"))


class TestStructure:
    def test_transpose_involution(self, rng):
        for _ in range(20):
            g = random_graph(rng, 12, 9, 40)
            g.validate()

    def test_canonical_edge_order(self):
        g = from_edges([1, 0, 0], [0, 1, 0])
        assert g.edges.tolist() == [[0, 0], [0, 1], [1, 0]]

    def test_cache_roundtrip(self, tmp_path, rng):
        g = random_graph(rng, 30, 20, 100)
        path = str(tmp_path / "g.bgc")
        g.save(path)
        g2 = BipartiteGraph.load(path)
        assert g2.num_users == g.num_users and g2.num_items == g.num_items
        assert np.array_equal(g2.edge_users, g.edge_users)
        assert np.array_equal(g2.edge_items, g.edge_items)
        assert np.array_equal(g2.i2u_indptr, g.i2u_indptr)

    def test_cache_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\0" * 64)
        with pytest.raises(GraphError, match="magic"):
            BipartiteGraph.load(str(path))

    def test_out_of_range_ids_rejected(self):
        with pytest.raises(GraphError):
            BipartiteGraph(2, 2, [0, 5], [0, 1])


class TestSplit:
    def test_ninety_ten(self, rng):
        g = random_graph(rng, 10, 10, 60)
        edges = g.num_edges
        train, test = split_train_test(g, 0.9, seed=7)
        assert train.num_edges == round(0.9 * edges)
        assert train.num_edges + test.num_edges == edges
        assert train.has_edge_set().isdisjoint(test.has_edge_set())
        assert train.has_edge_set() | test.has_edge_set() == g.has_edge_set()
        assert (train.num_users, train.num_items) == (g.num_users, g.num_items)

    def test_deterministic(self, rng):
        g = random_graph(rng, 15, 15, 80)
        a1, b1 = split_train_test(g, 0.7, seed=3)
        a2, b2 = split_train_test(g, 0.7, seed=3)
        assert np.array_equal(a1.edge_users, a2.edge_users)
        assert np.array_equal(b1.edge_items, b2.edge_items)

    def test_three_edges_round_up(self):
        g = from_edges([0, 1, 2], [0, 1, 2])
        train, test = split_train_test(g, 0.9, seed=0)
        assert train.num_edges == 3
        assert test.num_edges == 0

    def test_fraction_bounds(self):
        g = from_edges([0], [0])
        for bad in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(GraphError):
                split_train_test(g, bad, seed=0)

    def test_partition_property_fuzz(self, rng):
        for trial in range(25):
            g = random_graph(rng, 8 + trial, 6 + trial, 30 + 4 * trial)
            frac = float(rng.uniform(0.1, 0.95))
            train, test = split_train_test(g, frac, seed=trial)
            assert train.has_edge_set() | test.has_edge_set() == g.has_edge_set()
            assert train.has_edge_set().isdisjoint(test.has_edge_set())


class TestDegreeHistogram:
    def test_star_user_side(self):
        g = from_edges([0] * 5, range(5))
        assert degree_histogram(g, "user").buckets == {5: 1}

    def test_star_item_side(self):
        g = from_edges([0] * 5, range(5))
        assert degree_histogram(g, "item").buckets == {1: 5}

    def test_three_edge_example(self):
        g = from_edges([0, 0, 1], [0, 1, 0])
        assert degree_histogram(g, "user").buckets == {2: 1, 1: 1}

    def test_mass_conservation(self, rng):
        for _ in range(10):
            g = random_graph(rng, 20, 14, 70)
            for side, n in (("user", 20), ("item", 14)):
                hist = degree_histogram(g, side)
                assert hist.total_vertices() == n

    def test_csv(self, tmp_path):
        g = from_edges([0, 0, 1], [0, 1, 0])
        path = tmp_path / "hist.csv"
        degree_histogram(g, "user").to_csv(str(path))
        assert path.read_text() == "degree,count\n1,1\n2,1\n"

    def test_loglog_slope_shift_invariance(self):
        hist = DegreeHistogram("user", {1: 100, 2: 25, 4: 6, 8: 1})
        scaled = DegreeHistogram("user", {4: 400, 8: 100, 16: 24, 32: 4})
        assert loglog_slope(hist) == pytest.approx(loglog_slope(scaled), abs=1e-12)


class TestFootprintEstimate:
    def test_million_vertex_training_estimate(self):
        total = memory_footprint_estimate(10**6, 3 * 10**8, 3, 128,
                                          training=True, bytes_per_element=4)
        assert total == pytest.approx(928e9, rel=0.01)

    def test_zero_layers(self):
        assert memory_footprint_estimate(100, 100, 0, 128) == 0

    def test_training_doubles(self):
        infer = memory_footprint_estimate(1000, 5000, 2, 16)
        train = memory_footprint_estimate(1000, 5000, 2, 16, training=True)
        assert train == 2 * infer

    def test_reuse_discount_counts_messages_once(self):
        v, e, layers, d = 1000, 5000, 2, 16
        full = memory_footprint_estimate(v, e, layers, d, training=True)
        reused = memory_footprint_estimate(v, e, layers, d, training=True,
                                           reuse_sddmm=True)
        assert full - reused == 4 * layers * d * e

    def test_overflow(self):
        with pytest.raises(OverflowError):
            memory_footprint_estimate(10**12, 10**15, 100, 4096,
                                      training=True, bytes_per_element=8)
