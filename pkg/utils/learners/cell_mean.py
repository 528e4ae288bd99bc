import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.linear_model import LinearRegression


def exposure_design(z) -> np.ndarray:
    """Regressor column for a one-dimensional exposure."""
    return np.asarray(z, dtype=np.float64).reshape(-1, 1)


class CellMeanRegressor(BaseEstimator, RegressorMixin):
    """Linear regression of the outcome on an exposure, with intercept."""

    def fit(self, X, y):
        self.model_ = LinearRegression().fit(exposure_design(X), y)
        return self

    def predict(self, X) -> np.ndarray:
        return self.model_.predict(exposure_design(X))
