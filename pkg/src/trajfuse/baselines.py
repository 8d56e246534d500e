"""Non-learned and reduced baselines."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .model import ModelConfig, TrajectoryModel
from .scene import AgentClass, PredictionInstance, SceneBatch, build_batch


def linear_regression_baseline(history, t_f: int) -> np.ndarray:
    """Per-coordinate least-squares line through (frame index, position), extrapolated t_f steps."""
    history = np.asarray(history, dtype=float)
    t_h = history.shape[-2]
    if t_h < 2:
        raise ValueError(f"linear regression needs at least 2 history steps, got {t_h}")
    t = np.arange(1, t_h + 1, dtype=float)
    tc = t - t.mean()
    mean = history.mean(axis=-2, keepdims=True)
    slope = np.einsum("t,...tc->...c", tc, history - mean) / (tc @ tc)
    future = np.arange(t_h + 1, t_h + t_f + 1, dtype=float) - t.mean()
    return mean + future[:, None] * slope[..., None, :]


class LinearRegressionPredictor:
    name = "Linear Regression"

    def __init__(self, t_f: int):
        self.t_f = t_f

    def predict(self, batch: SceneBatch) -> np.ndarray:
        return linear_regression_baseline(batch.target_hist, self.t_f)


def lstm_ae_config(base: ModelConfig) -> ModelConfig:
    """The autoencoder baseline: same encoder/decoder, social embedding fixed at zero."""
    return replace(base, fusion="none", head="l2")


def lstm_ae_baseline(history, t_f: int, model: TrajectoryModel, cls=None) -> np.ndarray:
    """Forecast a single history with an LSTM-AE model (no neighbours)."""
    history = np.asarray(history, dtype=float)
    inst = PredictionInstance("lstm-ae", "", 0, cls or AgentClass.VEHICLE, 0, history, np.zeros((t_f, 3)))
    return model.predict(build_batch([inst]))[0]
