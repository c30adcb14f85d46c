import numpy as np
import pytest

from safestream.data import make_synthetic
from safestream.engine import RetentionGradState, SafeConfig, SafeUnlearner
from safestream.gaussian import ClassConditionalGaussians, make_projection
from safestream.model import Architecture, grad_cross_entropy
from safestream.oracle import RetrainConfig, retrain


def central_difference(f, theta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(theta)
    for i in range(len(theta)):
        up, down = theta.copy(), theta.copy()
        up[i] += eps
        down[i] -= eps
        g[i] = (f(up) - f(down)) / (2.0 * eps)
    return g


def relative_error(got: np.ndarray, want: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(want)), 1e-30)
    return float(np.linalg.norm(got - want)) / denom


def build_engine(train, params0, safe: SafeConfig, proj_seed: int = 11):
    proj_dim = safe.proj_dim if safe.proj_dim is not None else min(train.dim, 32)
    projection = make_projection(train.dim, proj_dim, proj_seed)
    gaussians = ClassConditionalGaussians.fit(train.X, train.y, projection)
    retention = RetentionGradState(
        grad=grad_cross_entropy(params0, train.X, train.y),
        size_dt=train.n,
        size_d0=train.n,
    )
    return SafeUnlearner(
        params0, safe, retention, gaussians, train.class_counts(), train.ids
    )


@pytest.fixture(scope="session")
def blob_task():
    train, test = make_synthetic(1500, 10, 3, 4.0, seed=7)
    arch = Architecture(train.dim, train.n_classes)
    params0 = retrain(train.X, train.y, arch, RetrainConfig(epochs=120, lr=1.0, seed=0))
    return train, test, params0
