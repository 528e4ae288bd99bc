import numpy as np
import pytest

from utils.errors import InvalidArgumentError
from utils.graph import (MAX_DENSE_NODES, Graph, normalized_adjacency, parse_edge_list,
                         read_edge_list, rgg_generate, rgg_radius, second_order_matrix,
                         write_edge_list)


def test_rgg_single_node_has_no_edges(rng):
    g = rgg_generate(1, 30.0, rng)
    assert g.n == 1
    assert g.edge_count == 0


def test_rgg_zero_nodes_rejected(rng):
    with pytest.raises(InvalidArgumentError):
        rgg_generate(0, 30.0, rng)


def test_rgg_is_simple_and_respects_radius(rng):
    g = rgg_generate(300, 30.0, rng)
    assert not np.any(np.diag(g.adjacency))
    assert np.array_equal(g.adjacency, g.adjacency.T)
    dist = np.linalg.norm(g.positions[:, None, :] - g.positions[None, :, :], axis=-1)
    off_diag = ~np.eye(g.n, dtype=bool)
    assert np.array_equal(g.adjacency[off_diag], (dist <= g.radius)[off_diag])
    assert g.radius == pytest.approx(rgg_radius(300, 30.0))


def test_rgg_radius_formula():
    assert rgg_radius(2000, 30.0) == pytest.approx(np.sqrt(30.0 / (np.pi * 2000)))


def test_rgg_mean_degree_near_constant():
    degrees = [rgg_generate(2000, 30.0, np.random.default_rng(seed)).mean_degree
               for seed in range(5)]
    assert 24.0 <= np.mean(degrees) <= 30.0


def test_rgg_same_seed_same_graph():
    a = rgg_generate(200, 30.0, np.random.default_rng(7))
    b = rgg_generate(200, 30.0, np.random.default_rng(7))
    assert np.array_equal(a.adjacency, b.adjacency)


def test_normalized_adjacency_path(path_graph):
    a_hat = normalized_adjacency(path_graph).normalized_adjacency
    expected = np.zeros((3, 3))
    expected[0, 1] = expected[1, 0] = expected[1, 2] = expected[2, 1] = 1 / np.sqrt(2)
    np.testing.assert_allclose(a_hat, expected, atol=1e-12)


def test_normalized_adjacency_empty_graph(empty_graph):
    info = normalized_adjacency(empty_graph)
    assert np.all(info.normalized_adjacency == 0)
    assert np.all(info.degrees == 0)


def test_normalized_adjacency_complete_graph(triangle):
    a_hat = normalized_adjacency(triangle).normalized_adjacency
    expected = np.full((3, 3), 0.5)
    np.fill_diagonal(expected, 0.0)
    np.testing.assert_allclose(a_hat, expected)


def test_normalized_adjacency_is_symmetric(rng):
    a_hat = normalized_adjacency(rgg_generate(100, 30.0, rng)).normalized_adjacency
    np.testing.assert_allclose(a_hat, a_hat.T)


def test_second_order_path(path_graph):
    b = second_order_matrix(path_graph)
    expected = np.zeros((3, 3), dtype=bool)
    expected[0, 2] = expected[2, 0] = True
    assert np.array_equal(b, expected)


def test_second_order_triangle_is_empty(triangle):
    assert not second_order_matrix(triangle).any()


def test_second_order_star(star):
    b = second_order_matrix(star)
    assert not b[0].any() and not b[:, 0].any()
    leaves = b[1:, 1:]
    assert np.array_equal(leaves, ~np.eye(4, dtype=bool))


def test_second_order_is_disjoint_from_adjacency(rng):
    g = rgg_generate(150, 30.0, rng)
    b = second_order_matrix(g)
    assert not (b & g.adjacency).any()
    assert not np.diag(b).any()
    assert np.array_equal(b, b.T)


def test_graph_rejects_self_loops():
    with pytest.raises(InvalidArgumentError):
        Graph.from_edges(3, [(1, 1)])


def test_graph_rejects_asymmetric_matrix():
    adjacency = np.zeros((2, 2), dtype=bool)
    adjacency[0, 1] = True
    with pytest.raises(InvalidArgumentError):
        Graph(n=2, adjacency=adjacency)


def test_permutation_preserves_degree_multiset(rng):
    g = rgg_generate(60, 30.0, rng)
    perm = rng.permutation(g.n)
    h = g.permute(perm)
    assert sorted(h.degrees) == sorted(g.degrees)
    assert np.array_equal(h.degrees, g.degrees[perm])


def test_edge_list_file(tmp_path, rng):
    g = rgg_generate(40, 30.0, rng)
    path = write_edge_list(g, tmp_path / "graphs" / "g.edges")
    loaded = read_edge_list(path)
    assert loaded.n == g.n
    assert np.array_equal(loaded.adjacency, g.adjacency)
    assert loaded.radius == g.radius


def test_edge_list_keeps_isolated_nodes():
    g = parse_edge_list("n=5 radius=none\n0 1\n")
    assert g.n == 5
    assert g.edge_count == 1
    assert g.degrees.tolist() == [1, 1, 0, 0, 0]


@pytest.mark.parametrize("text", ["", "nodes 4\n0 1\n", "n=3\n0 1 2\n", "n=3\n0 x\n", "n=2\n0 5\n"])
def test_edge_list_rejects_bad_input(text):
    with pytest.raises(InvalidArgumentError):
        parse_edge_list(text)


@pytest.mark.parametrize("n", [-1, 10 ** 12])
def test_out_of_range_node_count_is_rejected_before_allocation(n, rng):
    with pytest.raises(InvalidArgumentError):
        parse_edge_list(f"n={n} radius=none\n")
    with pytest.raises(InvalidArgumentError):
        Graph.from_edges(n, [])
    with pytest.raises(InvalidArgumentError):
        rgg_generate(n, 5.0, rng)


def test_largest_dense_graph_is_accepted():
    assert Graph.from_edges(MAX_DENSE_NODES, [(0, 1)]).n == MAX_DENSE_NODES
