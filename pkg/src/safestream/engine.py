"""The streaming unlearning engine: one perturbed, normalized gradient step
per deletion round, anchored at the initially trained parameters.

Per round the engine (i) updates the recursive retention gradient, (ii)
downdates the per-class Gaussian statistics, (iii) rebuilds the shift targets
for every point forgotten so far, (iv) assembles the total gradient and emits

    w_t = w_0 - gamma * g_t / ||g_t||_2 - b_t,

with b_t drawn i.i.d. N(0, phi^2) per coordinate. The engine never reads the
training set after initialization; it keeps only the surviving id set, the
forgotten points, and O(1)-per-class statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, StreamError
from .gaussian import ClassConditionalGaussians
from .model import ModelParams, grad_cross_entropy, sum_grad_kl_to_targets
from .shift import ShiftEstimator

ZERO_GRAD_TOL = 1e-12


@dataclass(frozen=True)
class SafeConfig:
    """Schedule and budget knobs for the streaming unlearner.

    ``W`` is the parameter-norm bound; when None it resolves to ||w_0||_2 at
    engine construction. ``lam`` weights the forgetting term against
    retention. ``proj_dim`` of None means min(input_dim, 32).
    """

    K: float = 2.5
    T: int = 20
    W: float | None = None
    epsilon: float = 5.0
    delta: float = 1e-5
    lam: float = 1000.0
    proj_dim: int | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.K <= 0:
            raise ConfigError(f"K must be positive, got {self.K}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if self.W is not None and self.W <= 0:
            raise ConfigError(f"W must be positive, got {self.W}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if self.lam < 0:
            raise ConfigError(f"lambda weight must be >= 0, got {self.lam}")
        if self.proj_dim is not None and self.proj_dim < 1:
            raise ConfigError(f"proj_dim must be >= 1, got {self.proj_dim}")

    def to_dict(self) -> dict:
        return {
            "K": self.K, "T": self.T, "W": self.W, "epsilon": self.epsilon,
            "delta": self.delta, "lam": self.lam, "proj_dim": self.proj_dim,
            "seed": self.seed,
        }


def learning_rate(config: SafeConfig) -> float:
    """gamma = sqrt(W) / (K sqrt(T)); requires a resolved W."""
    config.validate()
    if config.W is None:
        raise ConfigError("learning_rate needs a resolved W")
    return math.sqrt(config.W) / (config.K * math.sqrt(config.T))


def perturbation_scale(config: SafeConfig) -> float:
    """phi = W sqrt(2 ln(1.25/delta)) / epsilon, used as the per-coordinate
    standard deviation of the Gaussian perturbation."""
    config.validate()
    if config.W is None:
        raise ConfigError("perturbation_scale needs a resolved W")
    return config.W * math.sqrt(2.0 * math.log(1.25 / config.delta)) / config.epsilon


@dataclass
class RetentionGradState:
    """Recursively maintained mean gradient over the surviving data at w_0."""

    grad: np.ndarray
    size_dt: int
    size_d0: int


def update_retention_grad(state: RetentionGradState, grad_sum_ft: np.ndarray,
                          m: int) -> RetentionGradState:
    """One deletion round of the retention recursion:

    grad_t = (|D_{t-1}|/|D_t|) grad_{t-1} - (1/|D_t|) sum_{F_t} grad.

    ``grad_sum_ft`` is the *sum* (not mean) of per-sample gradients at w_0.
    """
    if m == 0:
        return RetentionGradState(state.grad.copy(), state.size_dt, state.size_d0)
    size_new = state.size_dt - m
    if size_new <= 0:
        raise StreamError(
            f"request of {m} points would empty the remaining data "
            f"({state.size_dt} left)"
        )
    grad = (state.size_dt / size_new) * state.grad - grad_sum_ft / size_new
    return RetentionGradState(grad, size_new, state.size_d0)


@dataclass
class ForgettingLedger:
    """All points forgotten so far, with their round indices and the trade-off
    weight lambda. Stores raw points only; targets are recomputed per round."""

    lam: float
    X: np.ndarray | None = None
    y: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    rounds: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def count(self) -> int:
        return len(self.y)

    def append(self, X: np.ndarray, y: np.ndarray, ids: np.ndarray, t: int) -> None:
        if len(y) == 0:
            return
        X = np.atleast_2d(X)
        self.X = X.copy() if self.X is None else np.vstack([self.X, X])
        self.y = np.concatenate([self.y, np.asarray(y, dtype=np.int64)])
        self.ids = np.concatenate([self.ids, np.asarray(ids, dtype=np.int64)])
        self.rounds = np.concatenate(
            [self.rounds, np.full(len(y), t, dtype=np.int64)]
        )


def forgetting_gradient(params0: ModelParams, ledger: ForgettingLedger,
                        shift: ShiftEstimator, counts_t: dict[int, int],
                        size_dt: int) -> np.ndarray:
    """(lam / sum |F_i|) * sum over forgotten points of the KL gradient toward
    the current shift targets; zero vector for an empty ledger."""
    if ledger.count == 0:
        return np.zeros(params0.arch.n_params)
    targets = shift.target_predictions(params0, ledger.X, counts_t, size_dt)
    g = sum_grad_kl_to_targets(params0, ledger.X, targets)
    return (ledger.lam / ledger.count) * g


@dataclass
class RoundResult:
    params: ModelParams
    round: int
    accepted: int                # request size after filtering
    dropped: int                 # duplicates / non-members ignored
    grad_norm: float
    perturbation: np.ndarray
    exhausted_classes: list[int]


class SafeUnlearner:
    """Single-writer state machine processing one deletion request per round."""

    def __init__(self, params0: ModelParams, config: SafeConfig,
                 retention: RetentionGradState,
                 gaussians: ClassConditionalGaussians,
                 class_counts: dict[int, int],
                 surviving_ids: np.ndarray):
        config.validate()
        if config.W is None:
            config = replace(config, W=float(np.linalg.norm(params0.theta)))
            if config.W <= 0:
                raise ConfigError("cannot resolve W from zero initial parameters")
        self.config = config
        self.params0 = params0.copy()
        self.retention = retention
        self.gaussians = gaussians
        self.class_counts = dict(class_counts)
        self.counts0 = dict(class_counts)
        self.surviving = set(int(i) for i in surviving_ids)
        self.ledger = ForgettingLedger(lam=config.lam)
        self.shift = ShiftEstimator(gaussians, self.counts0, retention.size_d0)
        self.gamma = learning_rate(config)
        self.phi = perturbation_scale(config)
        self.round = 0

    def _round_rng(self, t: int) -> np.random.Generator:
        # keyed by (seed, round) so checkpoint-resumed runs replay identically
        return np.random.default_rng(
            np.random.SeedSequence(entropy=self.config.seed, spawn_key=(t,))
        )

    def draw_perturbation(self, t: int) -> np.ndarray:
        return self._round_rng(t).normal(
            0.0, self.phi, size=self.params0.arch.n_params
        )

    def process_request(self, X: np.ndarray, y: np.ndarray,
                        ids: np.ndarray) -> RoundResult:
        t = self.round + 1
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.atleast_1d(np.asarray(y, dtype=np.int64))
        ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        if not (len(X) == len(y) == len(ids)):
            raise StreamError("request features, labels, and ids disagree in length")

        # containment rule: ignore points outside D_{t-1} or already forgotten
        keep = np.fromiter(
            (int(i) in self.surviving for i in ids), dtype=bool, count=len(ids)
        )
        dropped = int((~keep).sum())
        X, y, ids = X[keep], y[keep], ids[keep]
        m = len(y)

        if m:
            grad_sum = grad_cross_entropy(self.params0, X, y) * m
        else:
            grad_sum = np.zeros(self.params0.arch.n_params)
        self.retention = update_retention_grad(self.retention, grad_sum, m)

        exhausted = self.gaussians.remove(X, y) if m else []

        for label in y:
            self.class_counts[int(label)] -= 1
        self.surviving.difference_update(int(i) for i in ids)
        self.ledger.append(X, y, ids, t)

        g = self.retention.grad + forgetting_gradient(
            self.params0, self.ledger, self.shift,
            self.class_counts, self.retention.size_dt,
        )
        b = self.draw_perturbation(t)
        gnorm = float(np.linalg.norm(g))
        theta = self.params0.theta - b
        if gnorm >= ZERO_GRAD_TOL:  # Eq. would divide by ~0 otherwise
            theta = theta - self.gamma * (g / gnorm)
        self.round = t
        return RoundResult(
            params=ModelParams(self.params0.arch, theta),
            round=t,
            accepted=m,
            dropped=dropped,
            grad_norm=gnorm,
            perturbation=b,
            exhausted_classes=exhausted,
        )

    def checkpoint(self) -> dict:
        """JSON-serializable state for resumable runs."""
        g = self.gaussians
        return {
            "round": self.round,
            "config": self.config.to_dict(),
            "arch": self.params0.arch.to_dict(),
            "theta0": self.params0.theta.tolist(),
            "retention": {
                "grad": self.retention.grad.tolist(),
                "size_dt": self.retention.size_dt,
                "size_d0": self.retention.size_d0,
            },
            "class_counts": {str(k): v for k, v in self.class_counts.items()},
            "counts0": {str(k): v for k, v in self.counts0.items()},
            "surviving_ids": sorted(self.surviving),
            "ledger": {
                "X": [] if self.ledger.X is None else self.ledger.X.tolist(),
                "y": self.ledger.y.tolist(),
                "ids": self.ledger.ids.tolist(),
                "rounds": self.ledger.rounds.tolist(),
            },
            "stats": g.snapshot(),
            "projection": g.projection.tolist(),
            "base_mu": {str(k): v.tolist() for k, v in g.base_mu.items()},
            "base_chol": {str(k): v.tolist() for k, v in g.base_chol.items()},
            "min_class_count": g.min_class_count,
        }

    @classmethod
    def restore(cls, state: dict) -> "SafeUnlearner":
        from .gaussian import ClassStats, cholesky_with_jitter
        from .model import Architecture

        arch = Architecture.from_dict(state["arch"])
        params0 = ModelParams(arch, np.asarray(state["theta0"]))
        cfg = SafeConfig(**state["config"])
        stats = {}
        for key, st in state["stats"].items():
            sigma = np.asarray(st["sigma"])
            stats[int(key)] = ClassStats(
                n=int(st["n"]), mu=np.asarray(st["mu"]), sigma=sigma,
                chol=cholesky_with_jitter(sigma), frozen=bool(st["frozen"]),
            )
        gaussians = ClassConditionalGaussians(
            projection=np.asarray(state["projection"]),
            base_mu={int(k): np.asarray(v) for k, v in state["base_mu"].items()},
            base_chol={int(k): np.asarray(v) for k, v in state["base_chol"].items()},
            stats=stats,
            min_class_count=int(state["min_class_count"]),
        )
        retention = RetentionGradState(
            grad=np.asarray(state["retention"]["grad"]),
            size_dt=int(state["retention"]["size_dt"]),
            size_d0=int(state["retention"]["size_d0"]),
        )
        counts = {int(k): int(v) for k, v in state["class_counts"].items()}
        eng = cls(params0, cfg, retention, gaussians, counts,
                  np.asarray(state["surviving_ids"], dtype=np.int64))
        eng.counts0 = {int(k): int(v) for k, v in state["counts0"].items()}
        eng.shift = ShiftEstimator(gaussians, eng.counts0, retention.size_d0)
        led = state["ledger"]
        if led["y"]:
            eng.ledger.X = np.asarray(led["X"], dtype=np.float64)
            eng.ledger.y = np.asarray(led["y"], dtype=np.int64)
            eng.ledger.ids = np.asarray(led["ids"], dtype=np.int64)
            eng.ledger.rounds = np.asarray(led["rounds"], dtype=np.int64)
        eng.round = int(state["round"])
        return eng
