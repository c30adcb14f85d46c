"""Posterior-shift estimation: approximate the retrained model's predictions
by reweighting the initial model with label and class-conditional density
ratios, then renormalizing.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .gaussian import ClassConditionalGaussians
from .model import ModelParams, predict_proba_batch

RATIO_FLOOR = 1e-6
RATIO_CEIL = 1e6


def label_ratio(n_t_y: int, n_0_y: int, size_dt: int, size_d0: int) -> float:
    """(n_t(y)/n_0(y)) * (|D_0|/|D_t|); floored when the class is exhausted."""
    if n_0_y <= 0:
        raise ConfigError(f"initial class count must be positive, got {n_0_y}")
    if size_dt <= 0:
        raise ConfigError(f"remaining-data size must be positive, got {size_dt}")
    if n_t_y == 0:
        return RATIO_FLOOR  # class fully forgotten; keep the target well-defined
    return (n_t_y / n_0_y) * (size_d0 / size_dt)


def density_ratio(z: np.ndarray, gaussians: ClassConditionalGaussians,
                  label: int) -> float:
    """Current-vs-initial Gaussian density ratio at a standardized point,
    clipped to [1e-6, 1e6]."""
    logr = gaussians.log_density_vs_base(z, label)
    with np.errstate(over="ignore"):
        return float(np.clip(np.exp(logr), RATIO_FLOOR, RATIO_CEIL))


class ShiftEstimator:
    """Builds per-class shift ratios q_t and the resulting prediction targets.

    Ratios multiply the initial model's class probabilities componentwise and
    the result is renormalized; rows that degenerate fall back to the initial
    prediction unchanged.
    """

    def __init__(self, gaussians: ClassConditionalGaussians,
                 counts0: dict[int, int], size_d0: int):
        self.gaussians = gaussians
        self.counts0 = dict(counts0)
        self.size_d0 = size_d0

    def class_ratio_matrix(self, X: np.ndarray, counts_t: dict[int, int],
                           size_dt: int) -> np.ndarray:
        """(n, C) matrix of q_t^{(c)}(x_i) over every class c."""
        X = np.atleast_2d(X)
        n_classes = max(self.counts0) + 1
        q = np.full((len(X), n_classes), RATIO_FLOOR)
        for label in self.gaussians.classes:
            lr = label_ratio(
                counts_t.get(label, 0), self.counts0[label], size_dt, self.size_d0
            )
            Z = self.gaussians.standardize_batch(X, label)
            logr = self.gaussians.log_density_vs_base_batch(Z, label)
            with np.errstate(over="ignore"):
                dr = np.clip(np.exp(logr), RATIO_FLOOR, RATIO_CEIL)
            q[:, label] = lr * dr
        return q

    def target_predictions(self, params0: ModelParams, X: np.ndarray,
                           counts_t: dict[int, int], size_dt: int) -> np.ndarray:
        """Reweighted, renormalized stand-ins for the retrained predictions."""
        X = np.atleast_2d(X)
        probs0 = predict_proba_batch(params0, X)
        q = self.class_ratio_matrix(X, counts_t, size_dt)
        raw = probs0 * q
        norm = raw.sum(axis=1, keepdims=True)
        ok = np.isfinite(norm[:, 0]) & (norm[:, 0] > 0.0)
        out = np.where(ok[:, None], raw / np.where(ok[:, None], norm, 1.0), probs0)
        return out

    def target_prediction(self, params0: ModelParams, x: np.ndarray,
                          counts_t: dict[int, int], size_dt: int) -> np.ndarray:
        return self.target_predictions(params0, np.asarray(x)[None, :],
                                       counts_t, size_dt)[0]
