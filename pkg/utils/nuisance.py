"""Cross-fitted nuisance functions: treatment propensity, oracle exposure propensity,
partition-cell outcome means and partition-cell propensities."""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit
from scipy.stats import binom
from sklearn.base import RegressorMixin
from sklearn.linear_model import LinearRegression
from sklearn.model_selection import KFold

from .config import TRIM_BOUND
from .errors import InvalidArgumentError
from .exposure import Partition, cell_indicator
from .graph import Graph
from .learners import CellMeanRegressor, NewtonLogisticRegression, exposure_design

logger = logging.getLogger(__name__)

# Pr(D=1 | X=1) under the simulated assignment model, used by the oracle
ELIGIBLE_TREATMENT_PROBABILITY = float(expit(3.0))
FALLBACK_BINS = 10
# more observations than the intercept and slope of the linear cell-mean fit
MIN_CELL_OBS = 3

RegressorFactory = Callable[[], RegressorMixin]


@dataclass(frozen=True, eq=False)
class FoldScheme:
    K: int
    assignment: np.ndarray

    def splits(self) -> Iterator[Tuple[int, np.ndarray, np.ndarray]]:
        """Yield (fold, train_index, test_index) for every fold."""
        for k in range(self.K):
            test = np.flatnonzero(self.assignment == k)
            train = np.flatnonzero(self.assignment != k)
            yield k, train, test

    @property
    def n(self) -> int:
        return self.assignment.size


def make_folds(n: int, K: int, seed: int) -> FoldScheme:
    if K < 2:
        raise InvalidArgumentError(f"cross-fitting needs at least 2 folds, got {K}")
    if n < K:
        raise InvalidArgumentError(f"cannot split {n} observations into {K} folds")
    assignment = np.empty(n, dtype=np.int64)
    kf = KFold(n_splits=K, shuffle=True, random_state=seed % (2 ** 32))
    for k, (_, test_index) in enumerate(kf.split(np.zeros((n, 1)))):
        assignment[test_index] = k
    return FoldScheme(K=K, assignment=assignment)


def trim(p: np.ndarray, bound: float = TRIM_BOUND) -> np.ndarray:
    return np.clip(p, bound, 1.0 - bound)


def _binned_frequency(train_x: np.ndarray, train_y: np.ndarray,
                      test_x: np.ndarray) -> np.ndarray:
    """Mean of ``train_y`` within bins of ``train_x``; empty bins use the overall mean."""
    overall = float(train_y.mean())
    levels = np.unique(train_x)
    if levels.size <= FALLBACK_BINS:
        table = {v: float(train_y[train_x == v].mean()) for v in levels}
        return np.array([table.get(v, overall) for v in test_x])
    edges = np.unique(np.quantile(train_x, np.linspace(0, 1, FALLBACK_BINS + 1)[1:-1]))
    train_bins = np.searchsorted(edges, train_x, side="left")
    test_bins = np.searchsorted(edges, test_x, side="left")
    out = np.full(test_x.size, overall)
    for b in np.unique(test_bins):
        members = train_bins == b
        if members.any():
            out[test_bins == b] = train_y[members].mean()
    return out


def _logistic_or_frequency(train_x: np.ndarray, train_y: np.ndarray, test_x: np.ndarray,
                           design: Callable[[np.ndarray], np.ndarray],
                           max_iter: int, tol: float) -> Tuple[np.ndarray, bool]:
    """Out-of-sample Pr(y=1 | x); falls back to cell frequencies under separation."""
    if np.unique(train_y).size < 2:
        return np.full(test_x.size, float(train_y.mean())), True
    if np.unique(train_x).size < 2:
        return np.full(test_x.size, float(train_y.mean())), False
    model = NewtonLogisticRegression(max_iter=max_iter, tol=tol).fit(design(train_x), train_y)
    if model.separated_ or not model.converged_:
        return _binned_frequency(train_x, train_y, test_x), True
    return model.predict_proba(design(test_x))[:, 1], False


def _check_folds(folds: FoldScheme, *sequences: np.ndarray) -> None:
    for seq in sequences:
        if len(seq) != folds.n:
            raise InvalidArgumentError(
                f"sequence of length {len(seq)} does not match {folds.n} fold assignments")


def fit_treatment_propensity(D: np.ndarray, X: np.ndarray, folds: FoldScheme,
                             trim_bound: float = TRIM_BOUND, max_iter: int = 100,
                             tol: float = 1e-8) -> np.ndarray:
    """Out-of-fold logistic regression Pr(D=1 | X), trimmed."""
    D = np.asarray(D, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    _check_folds(folds, D, X)
    out = np.empty(D.size)
    for k, train, test in folds.splits():
        out[test], fell_back = _logistic_or_frequency(
            X[train], D[train], X[test], lambda x: x.reshape(-1, 1), max_iter, tol)
        if fell_back:
            logger.warning("treatment propensity fold %d: separation, using cell frequencies", k)
    return trim(out, trim_bound)


def oracle_exposure_propensity(g: Graph, X: np.ndarray, threshold: int = 2,
                               treatment_probability: float = ELIGIBLE_TREATMENT_PROBABILITY
                               ) -> np.ndarray:
    """Exact Pr(sum_j a_ij D_j X_j > threshold | X_{-i}, A) under the simulated design.

    Only neighbours with X_j = 1 can contribute, each independently treated with
    probability logistic(3), so the count is Binomial(m_i, logistic(3)).
    """
    if threshold < 0:
        raise InvalidArgumentError(f"threshold must be nonnegative, got {threshold}")
    X = np.asarray(X, dtype=np.float64)
    if X.size != g.n:
        raise InvalidArgumentError(f"X has {X.size} entries for {g.n} nodes")
    eligible = g.adjacency.astype(np.float64) @ X
    return binom.sf(threshold, eligible.astype(np.int64), treatment_probability)


def _default_regressor() -> RegressorMixin:
    return CellMeanRegressor()


def _fit_subset(y: np.ndarray, z: np.ndarray, members: np.ndarray, z_eval: np.ndarray,
                factory: RegressorFactory) -> Optional[np.ndarray]:
    if members.sum() < MIN_CELL_OBS:
        return None
    model = factory().fit(z[members].reshape(-1, 1), y[members])
    return model.predict(z_eval.reshape(-1, 1))


def fit_cell_means(Y: np.ndarray, Z_dot: np.ndarray, partition: Partition, folds: FoldScheme,
                   regressor_factory: Optional[RegressorFactory] = None
                   ) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """Cross-fitted mu(Z_dot, Z_tilde in cell l) and mu(Z_dot, Z_tilde not in cell l).

    Returns two n x L arrays and a list of fallback flags. A training subset too
    small to fit is replaced by the full-sample fit of the same subset.
    """
    Y = np.asarray(Y, dtype=np.float64)
    Z_dot = np.asarray(Z_dot, dtype=np.float64)
    _check_folds(folds, Y, Z_dot, partition.labels)
    factory = regressor_factory or _default_regressor
    n, L = Y.size, partition.L
    means_in = np.empty((n, L))
    means_out = np.empty((n, L))
    flags: List[str] = []
    for l in range(1, L + 1):
        inside = partition.labels == l
        for target, members_all, tag in ((means_in, inside, "in"), (means_out, ~inside, "out")):
            for k, train, test in folds.splits():
                train_mask = np.zeros(n, dtype=bool)
                train_mask[train] = True
                fitted = _fit_subset(Y, Z_dot, train_mask & members_all, Z_dot[test], factory)
                if fitted is None:
                    flags.append(f"cell_{l}_{tag}_fold_{k}_global_fit")
                    logger.warning("cell %d (%s) has too few training observations in fold %d;"
                                   " using the full-sample fit", l, tag, k)
                    fitted = _fit_subset(Y, Z_dot, members_all, Z_dot[test], factory)
                    if fitted is None:
                        fitted = np.full(test.size, Y[members_all].mean()
                                         if members_all.any() else Y.mean())
                target[test, l - 1] = fitted
    return means_in, means_out, flags


def fit_cell_propensity(Z_dot: np.ndarray, partition: Partition, folds: FoldScheme,
                        trim_bound: float = TRIM_BOUND, max_iter: int = 100,
                        tol: float = 1e-8) -> Tuple[np.ndarray, List[str]]:
    """Cross-fitted p_l(Z_dot) = Pr(Z_tilde in cell l | Z_dot), trimmed; n x L."""
    Z_dot = np.asarray(Z_dot, dtype=np.float64)
    _check_folds(folds, Z_dot, partition.labels)
    out = np.empty((Z_dot.size, partition.L))
    flags: List[str] = []
    for l in range(1, partition.L + 1):
        indicator = cell_indicator(partition, l)
        for k, train, test in folds.splits():
            out[test, l - 1], fell_back = _logistic_or_frequency(
                Z_dot[train], indicator[train], Z_dot[test], exposure_design, max_iter, tol)
            if fell_back:
                flags.append(f"cell_{l}_fold_{k}_frequency")
    if flags:
        logger.debug("cell propensity used frequency fallback %d times", len(flags))
    return trim(out, trim_bound), flags


@dataclass(frozen=True, eq=False)
class NuisanceFit:
    treatment_propensity: Optional[np.ndarray]
    cell_means_in: np.ndarray
    cell_means_out: np.ndarray
    cell_propensity: np.ndarray
    flags: Tuple[str, ...] = field(default_factory=tuple)


def fit_nuisances(Y: np.ndarray, Z_dot: np.ndarray, partition: Partition, folds: FoldScheme,
                  D: Optional[np.ndarray] = None, X: Optional[np.ndarray] = None,
                  trim_bound: float = TRIM_BOUND, max_iter: int = 100, tol: float = 1e-8,
                  regressor_factory: Optional[RegressorFactory] = None) -> NuisanceFit:
    means_in, means_out, mean_flags = fit_cell_means(Y, Z_dot, partition, folds,
                                                     regressor_factory)
    propensity, prop_flags = fit_cell_propensity(Z_dot, partition, folds, trim_bound,
                                                 max_iter, tol)
    treatment = None
    if D is not None and X is not None:
        treatment = fit_treatment_propensity(D, X, folds, trim_bound, max_iter, tol)
    return NuisanceFit(treatment_propensity=treatment, cell_means_in=means_in,
                       cell_means_out=means_out, cell_propensity=propensity,
                       flags=tuple(mean_flags + prop_flags))


def _outcome_features(D: np.ndarray, Zlabels: np.ndarray, X: np.ndarray,
                      levels: Sequence) -> np.ndarray:
    dummies = [(Zlabels == level).astype(np.float64) for level in levels[1:]]
    return np.column_stack([D, *dummies, X, D * X])


@dataclass(frozen=True, eq=False)
class OutcomeModel:
    """Cross-fitted mu_i(d, z, X_i) for every treatment and exposure level."""
    levels: Tuple
    predictions: Dict[Tuple[int, object], np.ndarray]

    def predict(self, d: int, z) -> np.ndarray:
        try:
            return self.predictions[(int(d), z)]
        except KeyError as e:
            raise InvalidArgumentError(f"no outcome prediction for (d={d}, z={z})") from e


def fit_outcome_model(Y: np.ndarray, D: np.ndarray, Zlabels: np.ndarray, X: np.ndarray,
                      folds: FoldScheme) -> OutcomeModel:
    """Out-of-fold linear regression of Y on own treatment, exposure-level dummies,
    the covariate and treatment x covariate."""
    Y, D, X = (np.asarray(a, dtype=np.float64) for a in (Y, D, X))
    Zlabels = np.asarray(Zlabels)
    _check_folds(folds, Y, D, Zlabels, X)
    levels = tuple(np.unique(Zlabels).tolist())
    predictions = {(d, z): np.empty(Y.size) for d in (0, 1) for z in levels}
    for _, train, test in folds.splits():
        model = LinearRegression().fit(
            _outcome_features(D[train], Zlabels[train], X[train], levels), Y[train])
        for d in (0, 1):
            for z in levels:
                features = _outcome_features(np.full(test.size, float(d)),
                                             np.full(test.size, z, dtype=Zlabels.dtype),
                                             X[test], levels)
                predictions[(d, z)][test] = model.predict(features)
    return OutcomeModel(levels=levels, predictions=predictions)


def eligible_neighbor_counts(g: Graph, X: np.ndarray) -> np.ndarray:
    """Number of neighbours with X = 1, the covariate summary the exposure depends on."""
    X = np.asarray(X, dtype=np.float64)
    if X.size != g.n:
        raise InvalidArgumentError(f"X has {X.size} entries for {g.n} nodes")
    return g.adjacency.astype(np.float64) @ X


def fit_exposure_propensity(Zlabels: np.ndarray, g: Graph, X: np.ndarray, folds: FoldScheme,
                            trim_bound: float = TRIM_BOUND, max_iter: int = 100,
                            tol: float = 1e-8) -> Dict[object, np.ndarray]:
    """Cross-fitted Pr(Z_i = z | X_{-i}, A) for every observed exposure level.

    One logistic regression per level on the eligible-neighbour count, rows
    renormalised to sum to one, then trimmed.
    """
    Zlabels = np.asarray(Zlabels)
    counts = eligible_neighbor_counts(g, X)
    _check_folds(folds, Zlabels, counts)
    levels = np.unique(Zlabels).tolist()
    if len(levels) < 2:
        raise InvalidArgumentError("exposure takes a single value; no propensity to fit")
    out = np.empty((Zlabels.size, len(levels)))
    for j, level in enumerate(levels):
        indicator = (Zlabels == level).astype(np.float64)
        for k, train, test in folds.splits():
            out[test, j], fell_back = _logistic_or_frequency(
                counts[train], indicator[train], counts[test],
                lambda x: x.reshape(-1, 1), max_iter, tol)
            if fell_back:
                logger.warning("exposure level %s fold %d: using cell frequencies", level, k)
    out = out / out.sum(axis=1, keepdims=True)
    out = trim(out, trim_bound)
    return {level: out[:, j] for j, level in enumerate(levels)}


# fewer redraws with D_i = d than this fall back to the marginal exposure frequency
MIN_DESIGN_DRAWS = 20


def design_exposure_propensity(labels_of: Callable[[np.ndarray], np.ndarray],
                               treatment_prob: np.ndarray, draws: int,
                               rng: np.random.Generator, batch: int = 100,
                               trim_bound: float = TRIM_BOUND
                               ) -> Dict[Tuple[int, float], np.ndarray]:
    """Pr(Z_i = z | D_i = d, X, A) for a binary exposure rule, by redrawing treatment.

    ``labels_of`` maps a batch of treatment vectors (b x n) to their binary exposure
    labels; treatment is redrawn from its known assignment probabilities with graph
    and covariates held fixed. Returns {(d, z): n-vector}, trimmed.
    """
    if draws < 1:
        raise InvalidArgumentError(f"need at least one redraw, got {draws}")
    p = np.asarray(treatment_prob, dtype=np.float64).ravel()
    n = p.size
    exposed = np.zeros((2, n))
    seen = np.zeros((2, n))
    done = 0
    while done < draws:
        b = min(batch, draws - done)
        D = (rng.random((b, n)) < p).astype(np.float64)
        Z = np.asarray(labels_of(D), dtype=np.float64)
        if Z.shape != D.shape:
            raise InvalidArgumentError(f"exposure rule returned shape {Z.shape} for {D.shape}")
        seen[1] += D.sum(axis=0)
        seen[0] += (1 - D).sum(axis=0)
        exposed[1] += (Z * D).sum(axis=0)
        exposed[0] += (Z * (1 - D)).sum(axis=0)
        done += b
    marginal = exposed.sum(axis=0) / draws
    out: Dict[Tuple[int, float], np.ndarray] = {}
    for d in (0, 1):
        enough = seen[d] >= MIN_DESIGN_DRAWS
        p1 = np.where(enough, exposed[d] / np.maximum(seen[d], 1.0), marginal)
        sparse_rows = int((~enough).sum())
        if sparse_rows:
            logger.debug("%d units saw fewer than %d redraws with D=%d", sparse_rows,
                         MIN_DESIGN_DRAWS, d)
        p1 = trim(p1, trim_bound)
        out[(d, 1.0)] = p1
        out[(d, 0.0)] = 1.0 - p1
    return out
