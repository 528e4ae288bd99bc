"""Undirected social networks: random geometric graphs, normalized adjacency and
second-order neighbourhoods."""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

MAX_DENSE_NODES = 5000


def check_node_count(n: int) -> int:
    """Validate a node count before any n x n storage is allocated."""
    if not 0 <= n <= MAX_DENSE_NODES:
        raise InvalidArgumentError(
            f"node count must lie in [0, {MAX_DENSE_NODES}] for dense storage, got {n}")
    return n


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph stored as a dense boolean adjacency matrix.

    ``positions`` and ``radius`` are present for geometric graphs only.
    """
    n: int
    adjacency: np.ndarray
    positions: Optional[np.ndarray] = None
    radius: Optional[float] = None
    _neighbors: List[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        adjacency = np.asarray(self.adjacency, dtype=bool)
        if adjacency.shape != (self.n, self.n):
            raise InvalidArgumentError(
                f"adjacency must be {self.n}x{self.n}, got {adjacency.shape}")
        if self.n > MAX_DENSE_NODES:
            raise InvalidArgumentError(
                f"dense storage supports at most {MAX_DENSE_NODES} nodes, got {self.n}")
        if np.any(np.diag(adjacency)):
            raise InvalidArgumentError("adjacency has self-loops")
        if not np.array_equal(adjacency, adjacency.T):
            raise InvalidArgumentError("adjacency is not symmetric")
        adjacency.setflags(write=False)
        object.__setattr__(self, "adjacency", adjacency)
        if self.positions is not None:
            positions = np.asarray(self.positions, dtype=np.float64)
            positions.setflags(write=False)
            object.__setattr__(self, "positions", positions)
        object.__setattr__(
            self, "_neighbors", [np.flatnonzero(row) for row in adjacency])

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Tuple[int, int]],
                   radius: Optional[float] = None) -> "Graph":
        check_node_count(n)
        adjacency = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise InvalidArgumentError(f"edge ({i}, {j}) out of range for n={n}")
            if i == j:
                raise InvalidArgumentError(f"self-loop at node {i}")
            adjacency[i, j] = adjacency[j, i] = True
        return cls(n=n, adjacency=adjacency, radius=radius)

    def neighbors(self, i: int) -> np.ndarray:
        return self._neighbors[i]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(np.int64)

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.sum() // 2)

    @property
    def mean_degree(self) -> float:
        return float(self.degrees.mean()) if self.n else 0.0

    def edges(self) -> np.ndarray:
        """Edge array of shape (m, 2) with i < j, sorted lexicographically."""
        rows, cols = np.nonzero(np.triu(self.adjacency, k=1))
        return np.column_stack([rows, cols])

    def to_sparse(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(self.adjacency.astype(np.float64))

    def permute(self, perm: np.ndarray) -> "Graph":
        """Relabel nodes so that new node k is old node perm[k]."""
        perm = np.asarray(perm)
        positions = self.positions[perm] if self.positions is not None else None
        return Graph(n=self.n, adjacency=self.adjacency[np.ix_(perm, perm)],
                     positions=positions, radius=self.radius)


@dataclass(frozen=True, eq=False)
class DegreeInfo:
    degrees: np.ndarray
    normalized_adjacency: np.ndarray


def rgg_radius(n: int, c: float) -> float:
    return float(np.sqrt(c / (np.pi * n)))


def rgg_generate(n: int, c: float, rng: np.random.Generator) -> Graph:
    """Random geometric graph on the unit square with radius sqrt(c / (pi n)).

    Nodes at distance exactly equal to the radius are connected.
    """
    if n < 1:
        raise InvalidArgumentError(f"node count must be positive, got {n}")
    if c <= 0:
        raise InvalidArgumentError(f"radius constant must be positive, got {c}")
    check_node_count(n)
    radius = rgg_radius(n, c)
    positions = rng.uniform(0.0, 1.0, size=(n, 2))
    adjacency = np.zeros((n, n), dtype=bool)
    pairs = cKDTree(positions).query_pairs(r=radius, output_type="ndarray")
    if len(pairs):
        adjacency[pairs[:, 0], pairs[:, 1]] = True
        adjacency[pairs[:, 1], pairs[:, 0]] = True
    graph = Graph(n=n, adjacency=adjacency, positions=positions, radius=radius)
    logger.debug("generated RGG n=%d radius=%.5f edges=%d mean_degree=%.2f",
                 n, radius, graph.edge_count, graph.mean_degree)
    return graph


def normalized_adjacency(g: Graph) -> DegreeInfo:
    """T^{-1/2} A T^{-1/2}; rows and columns of isolated nodes are zero."""
    degrees = g.degrees
    inv_sqrt = np.zeros(g.n, dtype=np.float64)
    positive = degrees > 0
    inv_sqrt[positive] = 1.0 / np.sqrt(degrees[positive])
    normalized = g.adjacency * inv_sqrt[:, None] * inv_sqrt[None, :]
    return DegreeInfo(degrees=degrees, normalized_adjacency=normalized)


def second_order_matrix(g: Graph) -> np.ndarray:
    """b_ik = 1 iff k is two hops from i, not a direct neighbour and not i itself."""
    a = g.to_sparse()
    two_hop = (a @ a).toarray() > 0
    result = two_hop & ~g.adjacency
    np.fill_diagonal(result, False)
    return result


def write_edge_list(g: Graph, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    radius = "none" if g.radius is None else repr(float(g.radius))
    lines = [f"n={g.n} radius={radius}"]
    lines.extend(f"{i} {j}" for i, j in g.edges())
    path.write_text("\n".join(lines) + "\n")
    return path


def parse_edge_list(text: str) -> Graph:
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise InvalidArgumentError("empty edge-list")
    try:
        header = dict(part.split("=", 1) for part in lines[0].split())
        n = int(header["n"])
        radius = None if header.get("radius", "none") == "none" else float(header["radius"])
    except (KeyError, ValueError) as e:
        raise InvalidArgumentError(f"bad edge-list header {lines[0]!r}: {e}") from e
    edges = []
    for line in lines[1:]:
        parts = line.split()
        if len(parts) != 2:
            raise InvalidArgumentError(f"bad edge line {line!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError as e:
            raise InvalidArgumentError(f"bad edge line {line!r}") from e
    return Graph.from_edges(n, edges, radius=radius)


def read_edge_list(path: Union[str, Path]) -> Graph:
    return parse_edge_list(Path(path).read_text())
