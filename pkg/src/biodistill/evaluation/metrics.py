"""Prediction-quality metrics shared by every probe and baseline."""

from typing import Dict

import numpy as np
from scipy.stats import rankdata

from ..errors import ConfigError, NumericError


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ConfigError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr


def regression_metrics(y_true, y_pred) -> Dict[str, float]:
    """MAE, RMSE and Pearson's correlation between targets and predictions."""
    t = _as_vector(y_true, "y_true")
    p = _as_vector(y_pred, "y_pred")
    if t.size != p.size:
        raise ConfigError(f"length mismatch: {t.size} targets vs {p.size} predictions")
    err = p - t
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    tc = t - t.mean()
    pc = p - p.mean()
    denom = np.sqrt((tc * tc).sum() * (pc * pc).sum())
    if denom == 0.0:
        raise NumericError("pearson_r undefined: one side is constant")
    r = float((tc * pc).sum() / denom)
    return {"mae": mae, "rmse": rmse, "pearson_r": r}


def roc_auc(labels, scores) -> float:
    """Mann-Whitney AUC with tie-averaged ranks."""
    y = np.asarray(labels).reshape(-1)
    s = _as_vector(scores, "scores")
    if y.size != s.size:
        raise ConfigError(f"length mismatch: {y.size} labels vs {s.size} scores")
    if not np.all((y == 0) | (y == 1)):
        raise ConfigError("labels must be binary 0/1")
    n_pos = int(np.sum(y == 1))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ConfigError("roc_auc needs both classes present")
    ranks = rankdata(s, method="average")
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
