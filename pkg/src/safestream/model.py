"""Differentiable multiclass classifiers with analytic gradients.

Two desk-scale backbones: a softmax-linear head and a one-hidden-layer tanh
MLP. Parameters live in a single flat float64 vector so the unlearning engine
can treat every architecture as a point in R^p. All gradients are analytic
and are checked against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class Architecture:
    """Shape descriptor: input dim, class count, optional hidden width."""

    input_dim: int
    n_classes: int
    hidden_dim: int | None = None

    def __post_init__(self):
        if self.input_dim < 1 or self.n_classes < 2:
            raise ConfigError(f"invalid architecture {self}")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise ConfigError(f"invalid hidden_dim {self.hidden_dim}")

    @property
    def n_params(self) -> int:
        d, c, h = self.input_dim, self.n_classes, self.hidden_dim
        if h is None:
            return c * (d + 1)
        return h * (d + 1) + c * (h + 1)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "n_classes": self.n_classes,
            "hidden_dim": self.hidden_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(int(d["input_dim"]), int(d["n_classes"]), d.get("hidden_dim"))


@dataclass
class ModelParams:
    """Flat parameter vector plus its architecture."""

    arch: Architecture
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.arch.n_params,):
            raise ConfigError(
                f"theta has shape {self.theta.shape}, arch requires ({self.arch.n_params},)"
            )
        if not np.all(np.isfinite(self.theta)):
            raise ConfigError("theta contains non-finite entries")

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, self.theta.copy())


def init_params(arch: Architecture, rng: np.random.Generator | None = None) -> ModelParams:
    """Fresh initialization: zeros for the convex linear head, scaled
    Gaussian for the MLP (which needs symmetry breaking)."""
    if arch.hidden_dim is None:
        return ModelParams(arch, np.zeros(arch.n_params))
    if rng is None:
        rng = np.random.default_rng(0)
    d, c, h = arch.input_dim, arch.n_classes, arch.hidden_dim
    w1 = rng.standard_normal((h, d)) / np.sqrt(d)
    w2 = rng.standard_normal((c, h)) / np.sqrt(h)
    theta = np.concatenate([w1.ravel(), np.zeros(h), w2.ravel(), np.zeros(c)])
    return ModelParams(arch, theta)


def _linear_views(arch: Architecture, theta: np.ndarray):
    d, c = arch.input_dim, arch.n_classes
    return theta[: c * d].reshape(c, d), theta[c * d :]


def _mlp_views(arch: Architecture, theta: np.ndarray):
    d, c, h = arch.input_dim, arch.n_classes, arch.hidden_dim
    o = 0
    w1 = theta[o : o + h * d].reshape(h, d)
    o += h * d
    b1 = theta[o : o + h]
    o += h
    w2 = theta[o : o + c * h].reshape(c, h)
    o += c * h
    b2 = theta[o : o + c]
    return w1, b1, w2, b2


def _forward(params: ModelParams, X: np.ndarray):
    """Logits for a batch; returns (logits, hidden) with hidden None for linear."""
    arch = params.arch
    if X.ndim != 2 or X.shape[1] != arch.input_dim:
        raise ConfigError(f"input has shape {X.shape}, arch expects (*, {arch.input_dim})")
    if arch.hidden_dim is None:
        w, b = _linear_views(arch, params.theta)
        return X @ w.T + b, None
    w1, b1, w2, b2 = _mlp_views(arch, params.theta)
    hidden = np.tanh(X @ w1.T + b1)
    return hidden @ w2.T + b2, hidden


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict_proba_batch(params: ModelParams, X: np.ndarray) -> np.ndarray:
    logits, _ = _forward(params, np.atleast_2d(X))
    return _softmax(logits)


def predict_proba(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Softmax class probabilities for a single input."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ConfigError(f"expected a single feature vector, got shape {x.shape}")
    return predict_proba_batch(params, x[None, :])[0]


def cross_entropy_loss(params: ModelParams, x: np.ndarray, y: int) -> float:
    """-log p_y with the probability clamped at 1e-12 before the log."""
    c = params.arch.n_classes
    if not 0 <= y < c:
        raise ConfigError(f"label {y} outside [0, {c})")
    p = predict_proba(params, x)
    return float(-np.log(max(p[y], PROB_FLOOR)))


def mean_cross_entropy(params: ModelParams, X: np.ndarray, y: np.ndarray) -> float:
    p = predict_proba_batch(params, X)
    py = np.maximum(p[np.arange(len(y)), y], PROB_FLOOR)
    return float(-np.log(py).mean())


def _backprop_sum(params: ModelParams, X: np.ndarray, dlogits: np.ndarray,
                  hidden: np.ndarray | None) -> np.ndarray:
    """Flat gradient of sum_i L_i given dL_i/dlogits_i rows."""
    arch = params.arch
    if arch.hidden_dim is None:
        gw = dlogits.T @ X
        gb = dlogits.sum(axis=0)
        return np.concatenate([gw.ravel(), gb])
    w1, b1, w2, b2 = _mlp_views(arch, params.theta)
    gw2 = dlogits.T @ hidden
    gb2 = dlogits.sum(axis=0)
    dhidden = dlogits @ w2
    dpre = dhidden * (1.0 - hidden * hidden)
    gw1 = dpre.T @ X
    gb1 = dpre.sum(axis=0)
    return np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])


def grad_cross_entropy(params: ModelParams, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Mean analytic gradient of the cross-entropy over a batch."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if len(X) == 0:
        raise ConfigError("empty batch")
    logits, hidden = _forward(params, X)
    p = _softmax(logits)
    dlogits = p.copy()
    dlogits[np.arange(len(y)), y] -= 1.0
    return _backprop_sum(params, X, dlogits, hidden) / len(y)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) = sum_c p_c log(p_c / q_c), q clamped below at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ConfigError(f"length mismatch: {p.shape} vs {q.shape}")
    qc = np.maximum(q, PROB_FLOOR)
    terms = np.where(p > 0.0, p * (np.log(np.maximum(p, PROB_FLOOR)) - np.log(qc)), 0.0)
    return float(terms.sum())


def _kl_dlogits(p: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Rows of dKL(p||t)/dlogits for batched p, t: p_k (log(p_k/t_k) - KL)."""
    logp = np.log(np.maximum(p, PROB_FLOOR))
    logt = np.log(np.maximum(target, PROB_FLOOR))
    kl = (p * (logp - logt)).sum(axis=1, keepdims=True)
    return p * (logp - logt - kl)


def grad_kl_to_target(params: ModelParams, x: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Gradient of KL(predict_proba(params, x) || target) w.r.t. theta.

    The target is a constant: no gradient flows through it.
    """
    x = np.asarray(x, dtype=np.float64)[None, :]
    logits, hidden = _forward(params, x)
    p = _softmax(logits)
    dlogits = _kl_dlogits(p, np.asarray(target, dtype=np.float64)[None, :])
    return _backprop_sum(params, x, dlogits, hidden)


def sum_grad_kl_to_targets(params: ModelParams, X: np.ndarray,
                           targets: np.ndarray) -> np.ndarray:
    """Sum over rows of grad_kl_to_target, vectorized for ledger-sized batches."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    logits, hidden = _forward(params, X)
    p = _softmax(logits)
    dlogits = _kl_dlogits(p, np.asarray(targets, dtype=np.float64))
    return _backprop_sum(params, X, dlogits, hidden)
