"""Mean potential outcomes and direct / interference / total effects by inverse
probability weighting and the doubly robust score."""
import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np

from .config import TRIM_BOUND
from .errors import ContractViolationError, EmptyCellError, InvalidArgumentError
from .exposure import ExposureVector
from .nuisance import OutcomeModel, trim

logger = logging.getLogger(__name__)

Z_CRIT = 1.96
METHODS = ("ipw", "dr")

# Pr(Z=1 | .) for a binary exposure, {level: Pr(Z=level | .)} for discrete exposures, or
# {(d, level): Pr(Z=level | D_i=d, .)} when the exposure also depends on own treatment
ExposurePropensity = Union[np.ndarray, Mapping[object, np.ndarray]]


@dataclass
class EffectEstimate:
    estimand: str
    estimate: float
    std_error: float
    ci_95: Tuple[float, float]
    method: str
    influence: np.ndarray = field(repr=False, default=None)
    diagnostics: Dict = field(default_factory=dict)

    @classmethod
    def from_scores(cls, estimand: str, method: str, phi: np.ndarray,
                    estimate: Optional[float] = None, **diagnostics) -> "EffectEstimate":
        """Estimate as the mean of ``phi`` (unless given) with the i.i.d. influence s.e."""
        phi = np.asarray(phi, dtype=np.float64)
        value = float(phi.mean()) if estimate is None else float(estimate)
        influence = phi - phi.mean()
        se = float(np.sqrt(np.mean(influence ** 2) / phi.size))
        return cls(estimand=estimand, estimate=value, std_error=se,
                   ci_95=(value - Z_CRIT * se, value + Z_CRIT * se), method=method,
                   influence=influence, diagnostics=dict(diagnostics))

    def to_record(self) -> Dict:
        return {"estimand": self.estimand, "method": self.method,
                "estimate": self.estimate, "se": self.std_error}


@dataclass(frozen=True, eq=False)
class EffectNuisances:
    treatment_propensity: np.ndarray
    exposure_propensity: ExposurePropensity
    outcome_model: Optional[OutcomeModel] = None


def _check_factor(p: np.ndarray, label: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0) or np.any(p >= 1):
        raise ContractViolationError(f"{label} must lie strictly inside (0, 1)")
    return p


def _exposure_factor(d: int, z, exposure_prop: ExposurePropensity) -> np.ndarray:
    if isinstance(exposure_prop, Mapping):
        if (d, z) in exposure_prop:
            return _check_factor(exposure_prop[(d, z)], "exposure propensity")
        if z not in exposure_prop:
            raise InvalidArgumentError(f"no exposure propensity for level {z!r}")
        return _check_factor(exposure_prop[z], "exposure propensity")
    p1 = _check_factor(exposure_prop, "exposure propensity")
    if z not in (0, 1):
        raise InvalidArgumentError(f"binary exposure propensity given for level {z!r}")
    return p1 if z == 1 else 1.0 - p1


def joint_propensity(d: int, z, treatment_prop: np.ndarray,
                     exposure_prop: ExposurePropensity) -> np.ndarray:
    """p_i(d, z) = Pr(D_i = d | X_i) * Pr(Z_i = z | X_{-i}, A)."""
    if d not in (0, 1):
        raise InvalidArgumentError(f"treatment must be 0 or 1, got {d}")
    p_treat = _check_factor(treatment_prop, "treatment propensity")
    p_d = p_treat if d == 1 else 1.0 - p_treat
    return p_d * _exposure_factor(d, z, exposure_prop)


def _cell_weights(D, Zlabels, d, z, p) -> np.ndarray:
    D = np.asarray(D)
    Zlabels = np.asarray(Zlabels)
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), D.shape)
    if np.any(p <= 0) or np.any(p > 1):
        raise ContractViolationError("joint propensity must lie in (0, 1]")
    in_cell = (D == d) & (Zlabels == z)
    if not in_cell.any():
        raise EmptyCellError(f"no observations with D={d}, Z={z}", cell=(d, z))
    return in_cell.astype(np.float64) / p


def _normalized_scores(base: np.ndarray, weights: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """base + w (Y - base) with the weights rescaled to average one."""
    return base + weights / weights.mean() * (Y - base)


def ipw_mean_po(Y, D, Zlabels, d: int, z, p, normalize: bool = False) -> EffectEstimate:
    """E[Y(d, z)] as the mean of Y * 1{D=d, Z=z} / p(d, z).

    With ``normalize`` the weights are rescaled to average one, giving the ratio
    sum(w Y) / sum(w).
    """
    weights = _cell_weights(D, Zlabels, d, z, p)
    Y = np.asarray(Y, dtype=np.float64)
    if normalize:
        ratio = float((weights * Y).sum() / weights.sum())
        phi = _normalized_scores(np.full(Y.size, ratio), weights, Y)
    else:
        phi = weights * Y
    return EffectEstimate.from_scores(f"mean_po({d},{z})", "ipw", phi)


def dr_mean_po(Y, D, Zlabels, X, d: int, z, p, mu, normalize: bool = False) -> EffectEstimate:
    """E[Y(d, z)] from the doubly robust score mu + 1{D=d, Z=z} / p * (Y - mu).

    ``mu`` is either the per-observation mu_i(d, z, X_i) or an OutcomeModel. ``normalize``
    rescales the weights of the correction term to average one.
    """
    weights = _cell_weights(D, Zlabels, d, z, p)
    Y = np.asarray(Y, dtype=np.float64)
    if isinstance(mu, OutcomeModel):
        mu = mu.predict(d, z)
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), Y.shape)
    if len(X) != Y.size:
        raise InvalidArgumentError("covariate length does not match the outcome")
    phi = _normalized_scores(mu, weights, Y) if normalize else mu + weights * (Y - mu)
    return EffectEstimate.from_scores(f"mean_po({d},{z})", "dr", phi)


def contrast(a: EffectEstimate, b: EffectEstimate, estimand: str) -> EffectEstimate:
    """a - b with the standard error of the difference of influence functions."""
    phi = (a.influence + a.estimate) - (b.influence + b.estimate)
    return EffectEstimate.from_scores(estimand, a.method, phi,
                                      estimate=a.estimate - b.estimate)


class PotentialOutcomeEstimator:
    """Caches mean potential-outcome estimates for one dataset and method."""

    def __init__(self, Y, D, Zlabels, X, nuisances: EffectNuisances, method: str = "ipw",
                 trim_bound: float = TRIM_BOUND, normalize: bool = False):
        if method not in METHODS:
            raise InvalidArgumentError(f"unknown method {method!r}")
        if method == "dr" and nuisances.outcome_model is None:
            raise InvalidArgumentError("the doubly robust method needs an outcome model")
        self.Y = np.asarray(Y, dtype=np.float64)
        self.D = np.asarray(D)
        self.Zlabels = np.asarray(Zlabels)
        self.X = np.asarray(X)
        self.nuisances = nuisances
        self.method = method
        self.trim_bound = trim_bound
        self.normalize = normalize
        self._cache: Dict[Tuple[int, object], EffectEstimate] = {}

    def propensity(self, d: int, z) -> np.ndarray:
        return trim(joint_propensity(d, z, self.nuisances.treatment_propensity,
                                     self.nuisances.exposure_propensity), self.trim_bound)

    def mean_po(self, d: int, z) -> EffectEstimate:
        key = (int(d), z)
        if key not in self._cache:
            p = self.propensity(d, z)
            if self.method == "ipw":
                est = ipw_mean_po(self.Y, self.D, self.Zlabels, d, z, p, self.normalize)
            else:
                est = dr_mean_po(self.Y, self.D, self.Zlabels, self.X, d, z, p,
                                 self.nuisances.outcome_model, self.normalize)
            self._cache[key] = est
        return self._cache[key]

    def direct_effect(self, z) -> EffectEstimate:
        return contrast(self.mean_po(1, z), self.mean_po(0, z), f"gamma({z})")

    def interference_effect(self, d: int, z, z_prime) -> EffectEstimate:
        return contrast(self.mean_po(d, z), self.mean_po(d, z_prime),
                        f"delta({d},{z},{z_prime})")

    def total_effect(self, z, z_prime) -> EffectEstimate:
        return contrast(self.mean_po(1, z), self.mean_po(0, z_prime), f"Delta({z},{z_prime})")


def direct_effect_avg(Y, D, Z: Union[ExposureVector, np.ndarray], X,
                      nuisances: EffectNuisances, method: str = "ipw",
                      trim_bound: float = TRIM_BOUND, normalize: bool = False) -> EffectEstimate:
    """gamma = sum_z w_z gamma(z), w_z the empirical share of exposure level z.

    ``Z`` must be discrete (binary or partition labels). Levels whose treated or
    control cell is empty are dropped and the weights renormalised.
    """
    labels = Z.values if isinstance(Z, ExposureVector) else np.asarray(Z)
    estimator = PotentialOutcomeEstimator(Y, D, labels, X, nuisances, method, trim_bound,
                                          normalize)
    n = labels.size
    per_level: Dict[object, EffectEstimate] = {}
    dropped = []
    for z in np.unique(labels).tolist():
        try:
            per_level[z] = estimator.direct_effect(z)
        except EmptyCellError as e:
            logger.warning("dropping exposure level %s from the direct effect: %s", z, e)
            dropped.append(z)
    if not per_level:
        raise EmptyCellError("no exposure level has both treated and control observations")
    kept = np.isin(labels, list(per_level))
    kept_mass = kept.mean()
    weights = {z: float(np.mean(labels == z) / kept_mass) for z in per_level}
    estimate = sum(weights[z] * per_level[z].estimate for z in per_level)
    phi = np.full(n, estimate)
    for z, est in per_level.items():
        share_if = ((labels == z).astype(np.float64) - weights[z] * kept) / kept_mass
        phi = phi + weights[z] * est.influence + share_if * est.estimate
    return EffectEstimate.from_scores(
        "gamma_avg", method, phi, estimate=estimate,
        weights=weights, dropped_levels=dropped,
        per_level={z: est.estimate for z, est in per_level.items()})


@dataclass(frozen=True)
class ExposureCut:
    """Orientation and threshold that turn a learned embedding into a binary exposure."""
    sign: float
    cut: float

    def apply(self, values) -> np.ndarray:
        return (self.sign * np.asarray(values, dtype=np.float64) > self.cut).astype(np.float64)


def learned_exposure_cut(learned: Union[ExposureVector, np.ndarray], decoder_weight: float,
                         exposed_share: float) -> ExposureCut:
    """Orient the embedding so that larger values raise the predicted outcome (sign of
    the decoder weight) and cut it so that a share ``exposed_share`` is exposed."""
    values = learned.values if isinstance(learned, ExposureVector) else np.asarray(learned)
    sign = 1.0 if decoder_weight >= 0 else -1.0
    share = float(np.clip(exposed_share, 0.0, 1.0))
    if share <= 0.0:
        return ExposureCut(sign, np.inf)
    if share >= 1.0:
        return ExposureCut(sign, -np.inf)
    return ExposureCut(sign, float(np.quantile(sign * values, 1.0 - share,
                                               method="inverted_cdf")))


def binarize_learned_exposure(learned: Union[ExposureVector, np.ndarray], decoder_weight: float,
                              exposed_share: float) -> np.ndarray:
    """Binary exposure from a learned embedding; see ``learned_exposure_cut``."""
    values = learned.values if isinstance(learned, ExposureVector) else np.asarray(learned)
    return learned_exposure_cut(values, decoder_weight, exposed_share).apply(values)
