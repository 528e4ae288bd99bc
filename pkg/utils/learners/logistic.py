import logging

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin

logger = logging.getLogger(__name__)

# |linear predictor| beyond this means fitted probabilities are 0 or 1 in double precision
SEPARATION_LOGIT = 25.0


class NewtonLogisticRegression(BaseEstimator, ClassifierMixin):
    """Unpenalised logistic regression with intercept, fitted by Newton-Raphson.

    Convergence is declared when the sup-norm of the score falls below ``tol``.
    ``separated_`` is set when the fit drives some probability to 0 or 1, which
    happens under (quasi-)complete separation.
    """

    def __init__(self, max_iter: int = 100, tol: float = 1e-8):
        self.max_iter = max_iter
        self.tol = tol

    @staticmethod
    def _design(X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        return np.hstack([np.ones((X.shape[0], 1)), X])

    def fit(self, X, y):
        design = self._design(X)
        y = np.asarray(y, dtype=np.float64).ravel()
        w = np.zeros(design.shape[1])
        self.converged_ = False
        self.n_iter_ = 0
        for it in range(1, self.max_iter + 1):
            p = expit(design @ w)
            score = design.T @ (y - p)
            if np.max(np.abs(score)) < self.tol:
                self.converged_ = True
                self.n_iter_ = it - 1
                break
            hessian = design.T @ (design * (p * (1 - p))[:, None])
            try:
                step = np.linalg.solve(hessian, score)
            except np.linalg.LinAlgError:
                step = np.linalg.pinv(hessian) @ score
            w = w + step
            self.n_iter_ = it
        else:
            p = expit(design @ w)
            self.converged_ = bool(np.max(np.abs(design.T @ (y - p))) < self.tol)
        self.intercept_ = float(w[0])
        self.coef_ = w[1:].copy()
        self.separated_ = bool(np.max(np.abs(design @ w)) > SEPARATION_LOGIT)
        if not self.converged_:
            logger.debug("Newton logistic regression stopped after %d iterations", self.n_iter_)
        return self

    def decision_function(self, X) -> np.ndarray:
        return self._design(X) @ np.concatenate([[self.intercept_], self.coef_])

    def predict_proba(self, X) -> np.ndarray:
        p = expit(self.decision_function(X))
        return np.column_stack([1 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0).astype(int)
