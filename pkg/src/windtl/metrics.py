"""Forecast error metrics."""

from __future__ import annotations

import numpy as np


def rmse(pred: np.ndarray, actual: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def mae(pred: np.ndarray, actual: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    return float(np.mean(np.abs(pred - actual)))


def skill_score(model_rmse: float, reference_rmse: float) -> float:
    """1 - rmse/reference; positive means better than the reference model."""
    if reference_rmse == 0.0:
        return 0.0 if model_rmse == 0.0 else -np.inf
    return 1.0 - model_rmse / reference_rmse
