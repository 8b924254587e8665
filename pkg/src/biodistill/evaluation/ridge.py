"""Closed-form ridge regression on centered data."""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NumericError


@dataclass(frozen=True)
class RidgeModel:
    weights: np.ndarray  # (D,)
    intercept: float
    alpha: float

    def predict(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights + self.intercept


def ridge_fit(x, y, alpha: float) -> RidgeModel:
    """w = (Xc'Xc + alpha I)^-1 Xc' yc with the intercept from the means."""
    if alpha < 0:
        raise ConfigError(f"alpha must be non-negative, got {alpha}")
    xm = np.asarray(x, dtype=np.float64)
    ym = np.asarray(y, dtype=np.float64).reshape(-1)
    if xm.ndim != 2:
        raise ConfigError(f"x must be (N, D), got shape {xm.shape}")
    if xm.shape[0] != ym.size:
        raise ConfigError(f"{xm.shape[0]} rows of x but {ym.size} targets")
    if xm.shape[0] < 2:
        raise ConfigError(f"ridge needs at least 2 rows, got {xm.shape[0]}")
    x_mean = xm.mean(axis=0)
    y_mean = float(ym.mean())
    xc = xm - x_mean
    yc = ym - y_mean
    gram = xc.T @ xc + alpha * np.eye(xm.shape[1])
    try:
        weights = np.linalg.solve(gram, xc.T @ yc)
    except np.linalg.LinAlgError as e:
        raise NumericError(
            f"ridge system is singular at alpha={alpha}; increase alpha"
        ) from e
    intercept = y_mean - float(x_mean @ weights)
    return RidgeModel(weights=weights, intercept=intercept, alpha=float(alpha))
