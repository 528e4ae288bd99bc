"""Synthetic populations on random geometric graphs with known exposure and outcomes."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit

from .config import Setting, SimConfig
from .errors import InvalidArgumentError
from .graph import Graph, rgg_generate, second_order_matrix, write_edge_list

logger = logging.getLogger(__name__)

DIRECT_THRESHOLD = 2
S3_OFFSET = 10.0
S3_RATE = 0.5


@dataclass(frozen=True, eq=False)
class Dataset:
    graph: Graph
    Y: np.ndarray
    D: np.ndarray
    X: np.ndarray
    Z_true: np.ndarray
    noise: np.ndarray
    config: SimConfig

    @property
    def n(self) -> int:
        return self.graph.n

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "id": np.arange(self.n),
            "Y": self.Y,
            "D": self.D.astype(int),
            "X": self.X.astype(int),
            "Z_true": self.Z_true,
        })


def treatment_probability(X: np.ndarray) -> np.ndarray:
    """Pr(D=1 | X) = logistic(1 + 2X)."""
    return expit(1.0 + 2.0 * np.asarray(X, dtype=np.float64))


def _ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    out = np.zeros_like(numerator, dtype=np.float64)
    np.divide(numerator, denominator, out=out, where=denominator > 0)
    return out


def treated_neighbor_counts(g: Graph, D: np.ndarray, X: np.ndarray) -> np.ndarray:
    """sum_j a_ij D_j X_j for every i."""
    eligible = np.asarray(D, dtype=np.float64) * np.asarray(X, dtype=np.float64)
    return g.adjacency.astype(np.float64) @ eligible


def _check_lengths(g: Graph, *sequences: np.ndarray) -> None:
    for seq in sequences:
        if len(seq) != g.n:
            raise InvalidArgumentError(
                f"sequence of length {len(seq)} does not match graph with {g.n} nodes")


def true_exposure(setting: Union[Setting, str], g: Graph, D: np.ndarray,
                  X: np.ndarray) -> np.ndarray:
    setting = Setting(setting)
    _check_lengths(g, D, X)
    counts = treated_neighbor_counts(g, D, X)
    if setting is Setting.DIRECT:
        return (counts > DIRECT_THRESHOLD).astype(np.float64)
    if setting is Setting.S3:
        return 1.0 - np.exp(-S3_RATE * np.maximum(0.0, counts - S3_OFFSET))
    share = _ratio(counts, g.degrees.astype(np.float64))
    if setting is Setting.S1:
        return share
    b = second_order_matrix(g).astype(np.float64)
    eligible = np.asarray(D, dtype=np.float64) * np.asarray(X, dtype=np.float64)
    return share + _ratio(b @ eligible, b.sum(axis=1))


def draw_population(cfg: SimConfig, rng: Optional[np.random.Generator] = None) -> Dataset:
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    graph = rgg_generate(cfg.n, cfg.radius_constant, rng)
    X = rng.binomial(1, 0.5, size=cfg.n).astype(np.float64)
    D = rng.binomial(1, treatment_probability(X)).astype(np.float64)
    noise = rng.standard_normal(cfg.n)
    Z = true_exposure(cfg.setting, graph, D, X)
    Y = cfg.alpha + cfg.delta * Z + cfg.gamma * D + cfg.xi * X + noise
    logger.debug("drew %s population n=%d mean_degree=%.2f treated=%.3f",
                 cfg.setting.value, cfg.n, graph.mean_degree, D.mean())
    return Dataset(graph=graph, Y=Y, D=D, X=X, Z_true=Z, noise=noise, config=cfg)


def counterfactual_outcome(cfg: SimConfig, dataset: Dataset, i: int, d: int, z: float) -> float:
    """Y_i(d, z) under the linear outcome model, reusing the stored noise draw."""
    if not 0 <= i < dataset.n:
        raise InvalidArgumentError(f"index {i} out of range for n={dataset.n}")
    if d not in (0, 1):
        raise InvalidArgumentError(f"treatment must be 0 or 1, got {d}")
    return float(cfg.alpha + cfg.delta * z + cfg.gamma * d
                 + cfg.xi * dataset.X[i] + dataset.noise[i])


def export_dataset(dataset: Dataset, path: Union[str, Path]) -> Tuple[Path, Path]:
    """Write the dataset as CSV and its graph as an edge-list next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset.to_frame().to_csv(path, index=False)
    graph_path = write_edge_list(dataset.graph, path.with_suffix(".edges"))
    return path, graph_path
