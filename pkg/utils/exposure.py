"""Researcher-defined exposure mappings and quantile partitions of learned exposures."""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Tuple, Union

import numpy as np

from .config import Setting
from .dgp import treated_neighbor_counts
from .errors import DegeneratePartitionError, InvalidArgumentError
from .graph import Graph

logger = logging.getLogger(__name__)


class ExposureKind(str, Enum):
    RESEARCHER_S1 = "researcher_S1"
    RESEARCHER_BINARY = "researcher_binary_S2S3"
    LEARNED = "learned"
    TRUE_ORACLE = "true_oracle"


# The binary mapping is the researcher's choice in Setting 2 and the direct-effect
# study; Setting 3 reuses the share-of-treated-neighbours mapping.
RESEARCHER_KIND_BY_SETTING = {
    Setting.S1: ExposureKind.RESEARCHER_S1,
    Setting.S2: ExposureKind.RESEARCHER_BINARY,
    Setting.S3: ExposureKind.RESEARCHER_S1,
    Setting.DIRECT: ExposureKind.RESEARCHER_BINARY,
}


@dataclass(frozen=True, eq=False)
class ExposureVector:
    values: np.ndarray
    kind: ExposureKind
    flags: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError(f"{self.kind} exposure has non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kind", ExposureKind(self.kind))

    def __len__(self) -> int:
        return self.values.size

    def with_flag(self, flag: str) -> "ExposureVector":
        return ExposureVector(self.values, self.kind, self.flags + (flag,))


def researcher_exposure(kind: Union[ExposureKind, str], g: Graph, D: np.ndarray,
                        X: np.ndarray) -> ExposureVector:
    try:
        kind = ExposureKind(kind)
    except ValueError as e:
        raise InvalidArgumentError(f"unknown exposure kind {kind!r}") from e
    if len(D) != g.n or len(X) != g.n:
        raise InvalidArgumentError("treatment and covariate lengths must match the graph")
    counts = treated_neighbor_counts(g, D, X)
    if kind is ExposureKind.RESEARCHER_S1:
        degrees = g.degrees.astype(np.float64)
        values = np.zeros(g.n)
        np.divide(counts, degrees, out=values, where=degrees > 0)
    elif kind is ExposureKind.RESEARCHER_BINARY:
        values = (counts > 0).astype(np.float64)
    else:
        raise InvalidArgumentError(f"{kind.value} is not a researcher-defined mapping")
    return ExposureVector(values, kind)


@dataclass(frozen=True, eq=False)
class Partition:
    """Right-closed cells (-inf, e_1], (e_1, e_2], ..., (e_{L-1}, inf); labels are 1-based."""
    L: int
    edges: np.ndarray
    labels: np.ndarray
    requested_L: int = 0

    def assign(self, values: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.edges, np.asarray(values), side="left") + 1

    def cell_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.L + 1)[1:]

    @property
    def collapsed(self) -> bool:
        return self.L < self.requested_L


def quantile_partition(v: Union[ExposureVector, np.ndarray], L: int) -> Partition:
    values = v.values if isinstance(v, ExposureVector) else np.asarray(v, dtype=np.float64)
    n = values.size
    if L < 2:
        raise InvalidArgumentError(f"need at least two cells, got L={L}")
    if n < L:
        raise InvalidArgumentError(f"need at least L={L} observations, got {n}")
    cuts = np.quantile(values, np.arange(1, L) / L, method="inverted_cdf")
    edges = np.unique(cuts)
    # a cut at the maximum leaves the top cell empty
    edges = edges[edges < values.max()]
    effective_L = edges.size + 1
    diagnostics = {"requested_L": L, "effective_L": effective_L,
                   "unique_values": int(np.unique(values).size)}
    if effective_L < 2:
        raise DegeneratePartitionError("exposure has no variation to partition", diagnostics)
    if effective_L < L:
        logger.warning("quantile partition collapsed from %d to %d cells", L, effective_L)
    labels = np.searchsorted(edges, values, side="left") + 1
    return Partition(L=effective_L, edges=edges, labels=labels, requested_L=L)


def cell_indicator(p: Partition, l: int) -> np.ndarray:
    if not 1 <= l <= p.L:
        raise InvalidArgumentError(f"cell index {l} outside 1..{p.L}")
    return (p.labels == l).astype(np.float64)
