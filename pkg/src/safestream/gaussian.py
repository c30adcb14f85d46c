"""Random projection, per-class Gaussian statistics with exact downdating,
Gaussian log-density, and Mardia's multivariate normality test.

Per-class feature statistics are kept in a *standardized* space frozen at
initialization: raw inputs are projected with a fixed Gaussian matrix, then
whitened per class with the inverse Cholesky factor of the initial projected
covariance. In that space the initial distribution of every class is N(0, I)
exactly, which makes the later density-ratio denominators closed-form.

The covariance downdate uses the exact sum-of-squares group identity

    (n_t - 1) S_t = (n_{t-1} - 1) S_{t-1} - (m - 1) S_rm
                    - (n_t m / n_{t-1}) (mu_t - mu_rm)(mu_t - mu_rm)^T

whose binding contract is equality with a fresh two-pass recomputation over
the surviving points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as spstats
from scipy.linalg import solve_triangular

from .errors import ClassExhaustionError, ConfigError, StatsError

LOG_2PI = float(np.log(2.0 * np.pi))
CHOL_JITTER = 1e-6


def make_projection(input_dim: int, proj_dim: int, seed: int) -> np.ndarray:
    """(input_dim, proj_dim) matrix with i.i.d. standard normal entries."""
    if proj_dim < 1:
        raise ConfigError(f"proj_dim must be >= 1, got {proj_dim}")
    if proj_dim > input_dim:
        raise ConfigError(f"proj_dim={proj_dim} exceeds input_dim={input_dim}")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((input_dim, proj_dim))


def cholesky_with_jitter(sigma: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; on failure adds 1e-6*I and retries once."""
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(sigma + CHOL_JITTER * np.eye(sigma.shape[0]))
    except np.linalg.LinAlgError:
        raise StatsError("covariance not positive definite even after jitter") from None


def gaussian_logpdf(z: np.ndarray, mu: np.ndarray, chol: np.ndarray) -> float:
    """Multivariate normal log-density from a precomputed Cholesky factor."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise StatsError("non-finite point passed to gaussian_logpdf")
    d = len(z)
    w = solve_triangular(chol, z - mu, lower=True)
    logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    return -0.5 * (d * LOG_2PI + logdet + float(w @ w))


def std_normal_logpdf(z: np.ndarray) -> float:
    z = np.asarray(z, dtype=np.float64)
    return -0.5 * (len(z) * LOG_2PI + float(z @ z))


def downdate_mean(n: int, mu: np.ndarray, m: int, mu_rm: np.ndarray,
                  min_count: int, label: int = -1) -> tuple[int, np.ndarray]:
    """Mean after removing a batch of m points with mean mu_rm."""
    if m == 0:
        return n, mu.copy()
    n_new = n - m
    if n_new < min_count:
        raise ClassExhaustionError(
            label, f"removing {m} points would leave class {label} with "
                   f"{n_new} < {min_count} samples"
        )
    return n_new, (n * mu - m * mu_rm) / n_new


def downdate_cov(n: int, sigma: np.ndarray, mu_new: np.ndarray, m: int,
                 mu_rm: np.ndarray, sigma_rm: np.ndarray,
                 label: int = -1) -> np.ndarray:
    """Bessel-corrected covariance after removing a batch.

    sigma_rm is the Bessel-corrected covariance of the removed batch and must
    be the zero matrix when m == 1.
    """
    if m == 0:
        return sigma.copy()
    n_new = n - m
    if n_new < 2:
        raise ClassExhaustionError(
            label, f"class {label} would drop to {n_new} < 2 samples"
        )
    diff = mu_new - mu_rm
    s_new = (
        (n - 1) * sigma
        - (m - 1) * sigma_rm
        - (n_new * m / n) * np.outer(diff, diff)
    )
    sigma_new = s_new / (n_new - 1)
    return 0.5 * (sigma_new + sigma_new.T)  # kill asymmetric rounding


def batch_mean_cov(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two-pass mean and Bessel-corrected covariance; zero matrix for m == 1."""
    Z = np.atleast_2d(Z)
    m, d = Z.shape
    mu = Z.mean(axis=0)
    if m == 1:
        return mu, np.zeros((d, d))
    centered = Z - mu
    return mu, centered.T @ centered / (m - 1)


@dataclass
class ClassStats:
    """Per-class running statistics in the standardized space."""

    n: int
    mu: np.ndarray
    sigma: np.ndarray
    chol: np.ndarray
    frozen: bool = False

    def snapshot(self) -> dict:
        return {
            "n": int(self.n),
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "frozen": self.frozen,
        }


class ClassConditionalGaussians:
    """Projected, per-class Gaussian model of the surviving training data.

    Holds the frozen initial transform (projection + per-class whitening) and
    the per-class statistics tracked under deletion. A class whose count would
    fall below ``min_class_count`` freezes at its last valid statistics.
    """

    def __init__(self, projection: np.ndarray, base_mu: dict[int, np.ndarray],
                 base_chol: dict[int, np.ndarray], stats: dict[int, ClassStats],
                 min_class_count: int):
        self.projection = projection
        self.base_mu = base_mu
        self.base_chol = base_chol
        self.stats = stats
        self.min_class_count = min_class_count

    @property
    def proj_dim(self) -> int:
        return self.projection.shape[1]

    @property
    def classes(self) -> list[int]:
        return sorted(self.stats)

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray, projection: np.ndarray,
            min_class_count: int | None = None) -> "ClassConditionalGaussians":
        proj_dim = projection.shape[1]
        if min_class_count is None:
            min_class_count = proj_dim + 2
        U = X @ projection
        base_mu: dict[int, np.ndarray] = {}
        base_chol: dict[int, np.ndarray] = {}
        stats: dict[int, ClassStats] = {}
        for label in np.unique(y):
            label = int(label)
            rows = U[y == label]
            if len(rows) < proj_dim + 2:
                raise ConfigError(
                    f"class {label} has {len(rows)} samples, "
                    f"needs >= {proj_dim + 2} for a {proj_dim}-dim Gaussian"
                )
            mu0, sigma0 = batch_mean_cov(rows)
            chol0 = cholesky_with_jitter(sigma0)
            Z = solve_triangular(chol0, (rows - mu0).T, lower=True).T
            mu, sigma = batch_mean_cov(Z)
            stats[label] = ClassStats(len(rows), mu, sigma, cholesky_with_jitter(sigma))
            base_mu[label] = mu0
            base_chol[label] = chol0
        return cls(projection, base_mu, base_chol, stats, min_class_count)

    def standardize_batch(self, X: np.ndarray, label: int) -> np.ndarray:
        """Frozen t=0 transform of raw inputs under the given class."""
        if label not in self.base_mu:
            raise StatsError(f"no statistics for class {label}")
        U = np.atleast_2d(X) @ self.projection
        return solve_triangular(
            self.base_chol[label], (U - self.base_mu[label]).T, lower=True
        ).T

    def standardize(self, x: np.ndarray, label: int) -> np.ndarray:
        return self.standardize_batch(np.asarray(x)[None, :], label)[0]

    def remove(self, X: np.ndarray, y: np.ndarray) -> list[int]:
        """Downdate per-class statistics for a deletion batch.

        Returns the labels whose statistics hit exhaustion and froze; already
        frozen classes are skipped silently.
        """
        exhausted: list[int] = []
        for label in np.unique(y):
            label = int(label)
            st = self.stats.get(label)
            if st is None:
                raise StatsError(f"deletion names unknown class {label}")
            if st.frozen:
                continue
            Z = self.standardize_batch(X[y == label], label)
            mu_rm, sigma_rm = batch_mean_cov(Z)
            try:
                n_new, mu_new = downdate_mean(
                    st.n, st.mu, len(Z), mu_rm, self.min_class_count, label
                )
                sigma_new = downdate_cov(
                    st.n, st.sigma, mu_new, len(Z), mu_rm, sigma_rm, label
                )
            except ClassExhaustionError:
                st.frozen = True
                exhausted.append(label)
                continue
            st.n, st.mu, st.sigma = n_new, mu_new, sigma_new
            st.chol = cholesky_with_jitter(sigma_new)
        return exhausted

    def log_density_vs_base(self, z: np.ndarray, label: int) -> float:
        """log N(z | mu_t, Sigma_t) - log N(z | 0, I) for one standardized point."""
        st = self.stats[label]
        return gaussian_logpdf(z, st.mu, st.chol) - std_normal_logpdf(z)

    def log_density_vs_base_batch(self, Z: np.ndarray, label: int) -> np.ndarray:
        st = self.stats[label]
        d = Z.shape[1]
        W = solve_triangular(st.chol, (Z - st.mu).T, lower=True).T
        logdet = 2.0 * float(np.log(np.diag(st.chol)).sum())
        log_num = -0.5 * (d * LOG_2PI + logdet + (W * W).sum(axis=1))
        log_den = -0.5 * (d * LOG_2PI + (Z * Z).sum(axis=1))
        return log_num - log_den

    def snapshot(self) -> dict:
        return {str(label): st.snapshot() for label, st in self.stats.items()}


def mardia_test(Z: np.ndarray) -> tuple[float, float]:
    """Mardia's multivariate normality test: (skewness p, kurtosis p).

    Skewness statistic n*b1/6 is referred to chi-squared with
    p(p+1)(p+2)/6 degrees of freedom; the kurtosis statistic is the two-sided
    normal z-score of b2 against mean p(p+2) and variance 8p(p+2)/n. Uses the
    classical maximum-likelihood (1/n) covariance.
    """
    Z = np.asarray(Z, dtype=np.float64)
    n, p = Z.shape
    if n < p + 2:
        raise StatsError(f"need at least {p + 2} rows for dimension {p}, got {n}")
    centered = Z - Z.mean(axis=0)
    sigma = centered.T @ centered / n
    chol = cholesky_with_jitter(sigma)
    W = solve_triangular(chol, centered.T, lower=True).T

    # b1 = (1/n^2) sum_ij (w_i . w_j)^3 = ||T||^2 / n^2 with
    # T_abc = sum_i w_ia w_ib w_ic, avoiding the n x n distance matrix.
    T = np.einsum("ia,ib,ic->abc", W, W, W)
    b1 = float((T * T).sum()) / n**2
    b2 = float(((W * W).sum(axis=1) ** 2).mean())

    skew_stat = n * b1 / 6.0
    df = p * (p + 1) * (p + 2) / 6.0
    p_skew = float(spstats.chi2.sf(skew_stat, df))

    kurt_z = (b2 - p * (p + 2)) / np.sqrt(8.0 * p * (p + 2) / n)
    p_kurt = float(2.0 * spstats.norm.sf(abs(kurt_z)))
    return p_skew, p_kurt
