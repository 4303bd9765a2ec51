import struct

import numpy as np
import pytest

from illsrec.dataset import build_graph
from illsrec.spreading import (
    IMPUTED,
    MISSING,
    OBSERVED,
    SPREAD,
    _spread_columns,
    binary_scores,
    densify,
    spread_stats,
    spread_user,
    write_scores,
)

from conftest import make_links, random_links


def explicit_operator(graph):
    """Dense item-to-item transfer matrix, built literally from the degrees."""
    A = graph.adjacency.toarray()
    n, m = A.shape
    W = np.zeros((n, n))
    for alpha in range(n):
        for beta in range(n):
            if graph.item_degrees[beta] == 0:
                continue
            total = 0.0
            for j in range(m):
                if graph.user_degrees[j] > 0:
                    total += A[alpha, j] * A[beta, j] / graph.user_degrees[j]
            W[alpha, beta] = total / graph.item_degrees[beta]
    return W


def random_graph(rng, max_items=30, max_users=30):
    n = int(rng.integers(2, max_items + 1))
    m = int(rng.integers(2, max_users + 1))
    count = int(rng.integers(1, n * m))
    return build_graph(random_links(rng, n, m, count))


class TestSpreadUser:
    def test_hand_worked_two_user_graph(self, tiny_graph):
        np.testing.assert_allclose(spread_user(tiny_graph, 0), [0.75, 1.0, 0.25])
        np.testing.assert_allclose(spread_user(tiny_graph, 1), [0.25, 1.0, 0.75])

    def test_empty_profile_gives_zero_vector(self):
        graph = build_graph(make_links({(0, 0)}, 2, 2))
        assert spread_user(graph, 1).tolist() == [0.0, 0.0]

    def test_single_user_single_item(self):
        graph = build_graph(make_links({(0, 0)}, 1, 1))
        assert spread_user(graph, 0).tolist() == [1.0]

    def test_bad_index(self, tiny_graph):
        with pytest.raises(IndexError):
            spread_user(tiny_graph, 5)

    def test_mass_conservation(self, rng):
        for _ in range(50):
            graph = random_graph(rng)
            for u in range(graph.user_count):
                out = spread_user(graph, u)
                assert abs(out.sum() - graph.user_degrees[u]) < 1e-12

    def test_non_negative(self, rng):
        for _ in range(20):
            graph = random_graph(rng)
            for u in range(graph.user_count):
                assert (spread_user(graph, u) >= 0).all()

    def test_positive_iff_within_two_hops(self, rng):
        for _ in range(20):
            graph = random_graph(rng, 12, 12)
            A = graph.adjacency.toarray()
            for u in range(graph.user_count):
                out = spread_user(graph, u)
                profile = set(graph.user_profile(u))
                reachable = set()
                for item in profile:
                    for j in graph.item_audience(item):
                        reachable.update(graph.user_profile(j))
                for alpha in range(graph.item_count):
                    assert (out[alpha] > 0) == (alpha in reachable)

    def test_matches_explicit_operator(self, rng):
        for _ in range(40):
            graph = random_graph(rng, 20, 20)
            W = explicit_operator(graph)
            A = graph.adjacency.toarray()
            for u in range(graph.user_count):
                expected = W @ A[:, u]
                np.testing.assert_allclose(spread_user(graph, u), expected,
                                           rtol=0, atol=1e-12)

    def test_column_sums_of_operator_are_one(self, rng):
        for _ in range(20):
            graph = random_graph(rng, 15, 15)
            W = explicit_operator(graph)
            held = graph.item_degrees > 0
            np.testing.assert_allclose(W[:, held].sum(axis=0), 1.0, atol=1e-12)

    def test_scaling_seed_scales_output_and_keeps_ranking(self, rng):
        for _ in range(10):
            graph = random_graph(rng, 15, 15)
            seed = np.zeros((graph.item_count, 1))
            seed[graph.user_profile(0), 0] = 1.0
            base = _spread_columns(graph, seed)[:, 0]
            scaled = _spread_columns(graph, 3.7 * seed)[:, 0]
            np.testing.assert_allclose(scaled, 3.7 * base, rtol=1e-12, atol=1e-15)
            assert np.argsort(-base, kind="stable").tolist() == \
                np.argsort(-scaled, kind="stable").tolist()


class TestDensify:
    def test_observed_overwrite(self, tiny_graph):
        scores = densify(tiny_graph)
        np.testing.assert_allclose(scores.values[:, 0], [1.0, 1.0, 0.25])
        assert scores.provenance[0, 0] == OBSERVED
        assert scores.provenance[1, 0] == OBSERVED
        assert scores.provenance[2, 0] == SPREAD

    def test_observed_entries_are_one(self, rng):
        for _ in range(10):
            graph = random_graph(rng)
            scores = densify(graph)
            observed = scores.provenance == OBSERVED
            assert (scores.values[observed] == 1.0).all()

    def test_disconnected_item_row_missing(self):
        links = make_links({(0, 0), (0, 1)}, 2, 2)
        scores = densify(build_graph(links))
        assert (scores.provenance[1] == MISSING).all()
        assert (scores.values[1] == 0.0).all()

    def test_columns_match_spread_user(self, rng):
        graph = random_graph(rng, 15, 15)
        scores = densify(graph)
        A = graph.adjacency.toarray()
        for u in range(graph.user_count):
            expected = spread_user(graph, u)
            expected[A[:, u] > 0] = 1.0
            np.testing.assert_allclose(scores.values[:, u], expected, atol=1e-12)

    def test_values_read_only(self, tiny_graph):
        scores = densify(tiny_graph)
        with pytest.raises(ValueError):
            scores.values[0, 0] = 9.0


class TestSpreadStats:
    def test_tiny_graph_mass(self, tiny_graph):
        stats = spread_stats(densify(tiny_graph))
        np.testing.assert_allclose(stats.per_user_mass, [2.0, 2.0])
        assert stats.nonzero_fraction == 1.0

    def test_empty_profile_mass_zero(self):
        graph = build_graph(make_links({(0, 0)}, 2, 2))
        stats = spread_stats(densify(graph))
        assert stats.per_user_mass[1] == 0.0

    def test_nonzero_fraction_counts_zeros(self):
        links = make_links({(0, 0), (0, 1)}, 2, 2)
        stats = spread_stats(densify(build_graph(links)))
        assert stats.nonzero_fraction == 0.5

    def test_mass_recomputed_without_cache(self, tiny_graph):
        scores = densify(tiny_graph)
        stripped = type(scores)(scores.values.copy(), scores.provenance.copy(),
                                scores.training, None)
        np.testing.assert_allclose(spread_stats(stripped).per_user_mass, [2.0, 2.0])


class TestBinaryScores:
    def test_observed_and_missing_only(self, tiny_links):
        scores = binary_scores(tiny_links)
        assert set(np.unique(scores.provenance)) <= {OBSERVED, MISSING}
        assert scores.values[0, 0] == 1.0 and scores.values[2, 0] == 0.0


class TestDump:
    def test_header_and_payload_layout(self, tiny_graph, tmp_path):
        scores = densify(tiny_graph)
        vpath = tmp_path / "scores.bin"
        ppath = tmp_path / "prov.bin"
        write_scores(scores, vpath, ppath)

        raw = vpath.read_bytes()
        n, m = struct.unpack("<QQ", raw[:16])
        assert (n, m) == (3, 2)
        values = np.frombuffer(raw[16:], dtype="<f8").reshape(n, m)
        np.testing.assert_array_equal(values, scores.values)

        raw = ppath.read_bytes()
        assert struct.unpack("<QQ", raw[:16]) == (3, 2)
        prov = np.frombuffer(raw[16:], dtype=np.uint8).reshape(n, m)
        np.testing.assert_array_equal(prov, scores.provenance)
