"""Graph convolutional autoencoder: a GCN encoder whose one-dimensional output is the
learned exposure, and a linear decoder that predicts the outcome from it."""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import sparse

from .config import GcaConfig
from .errors import InvalidArgumentError, TrainingDivergenceError
from .exposure import ExposureKind, ExposureVector
from .graph import Graph, normalized_adjacency
from .numerics import (ACTIVATIONS, OPTIMIZERS, ParameterSet, Tensor, backward, constant,
                       glorot_init, matmul, mse_loss)

logger = logging.getLogger(__name__)

INPUT_DIM = 2
DECODER_WEIGHT = "decoder_weight"
DECODER_BIAS = "decoder_bias"


def encoder_name(k: int) -> str:
    return f"encoder_{k}"


@dataclass
class GcaModel:
    params: ParameterSet
    config: GcaConfig
    loss_history: List[float] = field(default_factory=list)
    final_loss: Optional[float] = None

    @property
    def depth(self) -> int:
        return len(self.config.encoder_layer_dims)

    @property
    def encoder_weights(self) -> List[np.ndarray]:
        return [self.params[encoder_name(k)].value for k in range(self.depth)]

    @property
    def decoder_weight(self) -> float:
        return float(self.params[DECODER_WEIGHT].value[0, 0])

    @property
    def decoder_bias(self) -> float:
        return float(self.params[DECODER_BIAS].value[0, 0])


def build_features(D: np.ndarray, X: np.ndarray) -> Tensor:
    D = np.asarray(D, dtype=np.float64).ravel()
    X = np.asarray(X, dtype=np.float64).ravel()
    if D.size != X.size:
        raise InvalidArgumentError(f"D has {D.size} entries but X has {X.size}")
    return constant(np.column_stack([D, X]), name="M")


def propagation_matrix(g: Graph) -> Tensor:
    return constant(normalized_adjacency(g).normalized_adjacency, name="A_hat")


def init_model(cfg: GcaConfig, initial_bias: float = 0.0) -> GcaModel:
    """Glorot-initialised encoder and decoder weight; decoder bias set to ``initial_bias``."""
    rng = np.random.default_rng(cfg.seed)
    params = ParameterSet()
    dims = [INPUT_DIM, *cfg.encoder_layer_dims]
    for k in range(len(dims) - 1):
        params.add(encoder_name(k), glorot_init(dims[k], dims[k + 1], rng))
    params.add(DECODER_WEIGHT, glorot_init(1, 1, rng))
    params.add(DECODER_BIAS, np.array([[initial_bias]]))
    return GcaModel(params=params, config=cfg)


def _graph_conv(a_hat: Tensor, h: Tensor, w: Tensor) -> Tensor:
    # A (H W) == (A H) W; multiply on the narrower side first
    if h.cols <= w.cols:
        return matmul(matmul(a_hat, h), w)
    return matmul(a_hat, matmul(h, w))


def forward(model: GcaModel, g: Union[Graph, Tensor], M: Tensor) -> Tuple[Tensor, Tensor]:
    """Return (embedding n x 1, prediction n x 1).

    ``g`` may be the graph or an already built propagation matrix.
    """
    a_hat = g if isinstance(g, Tensor) else propagation_matrix(g)
    if a_hat.rows != M.rows:
        raise InvalidArgumentError(f"graph has {a_hat.rows} nodes but features have {M.rows} rows")
    if M.cols != INPUT_DIM:
        raise InvalidArgumentError(f"features must have {INPUT_DIM} columns, got {M.cols}")
    hidden = ACTIVATIONS[model.config.hidden_activation]
    h = M
    for k in range(model.depth):
        h = _graph_conv(a_hat, h, model.params[encoder_name(k)])
        if k < model.depth - 1:
            h = hidden(h)
    embedding = h
    prediction = matmul(embedding, model.params[DECODER_WEIGHT]) + model.params[DECODER_BIAS]
    return embedding, prediction


def train(g: Graph, D: np.ndarray, X: np.ndarray, Y: np.ndarray, cfg: GcaConfig) -> GcaModel:
    """Full-batch training of the autoencoder by mean squared error."""
    Y = np.asarray(Y, dtype=np.float64).ravel()
    if g.n < 2:
        raise InvalidArgumentError(f"training needs at least 2 nodes, got {g.n}")
    if Y.size != g.n:
        raise InvalidArgumentError(f"Y has {Y.size} entries for a graph with {g.n} nodes")
    a_hat = propagation_matrix(g)
    M = build_features(D, X)
    target = constant(Y, name="Y")
    model = init_model(cfg, initial_bias=float(Y.mean()))
    step = OPTIMIZERS[cfg.optimizer]
    last_finite = None
    for epoch in range(cfg.epochs):
        _, prediction = forward(model, a_hat, M)
        loss = mse_loss(prediction, target)
        value = float(loss.value[0, 0])
        if not np.isfinite(value):
            raise TrainingDivergenceError(
                f"loss became non-finite at epoch {epoch}", epoch, last_finite)
        last_finite = value
        model.loss_history.append(value)
        backward(loss)
        step(model.params, cfg.learning_rate)
    _, prediction = forward(model, a_hat, M)
    model.final_loss = float(mse_loss(prediction, target).value[0, 0])
    if not np.isfinite(model.final_loss):
        raise TrainingDivergenceError("final loss is non-finite", cfg.epochs, last_finite)
    logger.debug("trained GCA n=%d epochs=%d loss %.4f -> %.4f",
                 g.n, cfg.epochs, model.loss_history[0], model.final_loss)
    return model


def learned_exposure(model: GcaModel, g: Union[Graph, Tensor], D: np.ndarray,
                     X: np.ndarray) -> ExposureVector:
    embedding, _ = forward(model, g, build_features(D, X))
    return ExposureVector(embedding.value.ravel(), ExposureKind.LEARNED)


_ARRAY_ACTIVATIONS = {
    "relu": lambda v: np.maximum(v, 0.0),
    "identity": lambda v: v,
}


def embed_draws(model: GcaModel, g: Graph, D_draws: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Embeddings of a fixed model for many treatment vectors at once.

    ``D_draws`` is R x n; returns the R x n learned exposures, row r matching
    ``learned_exposure(model, g, D_draws[r], X)``.
    """
    D_draws = np.atleast_2d(np.asarray(D_draws, dtype=np.float64))
    X = np.asarray(X, dtype=np.float64).ravel()
    R, n = D_draws.shape
    if n != g.n or X.size != g.n:
        raise InvalidArgumentError(f"draws of width {n} and X of length {X.size} for {g.n} nodes")
    a_hat = sparse.csr_matrix(normalized_adjacency(g).normalized_adjacency)
    hidden = _ARRAY_ACTIVATIONS[model.config.hidden_activation]
    h = np.stack([D_draws, np.broadcast_to(X, D_draws.shape)], axis=-1)
    for k, w in enumerate(model.encoder_weights):
        hw = h @ w
        width = hw.shape[2]
        # nodes first so one sparse product propagates every draw
        spread = a_hat @ hw.transpose(1, 0, 2).reshape(n, R * width)
        h = np.asarray(spread).reshape(n, R, width).transpose(1, 0, 2)
        if k < model.depth - 1:
            h = hidden(h)
    return h[..., 0]


def save_model(model: GcaModel, path: Union[str, Path]) -> Path:
    """Store named weight matrices (shapes are kept by the container) plus the config."""
    path = Path(path)
    arrays = {name: tensor.value for name, tensor in model.params.items()}
    arrays["__config__"] = np.array(model.config.model_dump_json())
    arrays["__loss_history__"] = np.asarray(model.loss_history, dtype=np.float64)
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_model(path: Union[str, Path]) -> GcaModel:
    with np.load(Path(path), allow_pickle=False) as data:
        cfg = GcaConfig(**json.loads(str(data["__config__"])))
        model = init_model(cfg)
        for name in model.params:
            if name not in data:
                raise InvalidArgumentError(f"model file lacks weight {name!r}")
            stored = data[name]
            if stored.shape != model.params[name].shape:
                raise InvalidArgumentError(
                    f"weight {name!r} has shape {stored.shape}, expected {model.params[name].shape}")
            model.params[name].value = stored.astype(np.float64)
        model.loss_history = data["__loss_history__"].tolist()
    return model


def leave_own_out_exposure(model: GcaModel, g: Graph, D: np.ndarray, X: np.ndarray,
                           batch: int = 100) -> ExposureVector:
    """Learned exposure of each node with its own treatment set to zero, so it depends
    on the other nodes' treatments only."""
    D = np.asarray(D, dtype=np.float64).ravel()
    if D.size != g.n:
        raise InvalidArgumentError(f"D has {D.size} entries for {g.n} nodes")
    out = np.empty(g.n)
    for start in range(0, g.n, batch):
        nodes = np.arange(start, min(start + batch, g.n))
        draws = np.tile(D, (nodes.size, 1))
        draws[np.arange(nodes.size), nodes] = 0.0
        out[nodes] = embed_draws(model, g, draws, X)[np.arange(nodes.size), nodes]
    return ExposureVector(out, ExposureKind.LEARNED)
