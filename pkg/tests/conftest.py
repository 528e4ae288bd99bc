import numpy as np
import pytest

from utils.graph import Graph


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def path_graph():
    """0 - 1 - 2"""
    return Graph.from_edges(3, [(0, 1), (1, 2)])


@pytest.fixture
def triangle():
    return Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def star():
    """Centre 0 with leaves 1..4."""
    return Graph.from_edges(5, [(0, k) for k in range(1, 5)])


@pytest.fixture
def empty_graph():
    return Graph.from_edges(4, [])
