"""Gaussian-process regression surrogate over one-hot genome features.

One GP is fit per objective.  The kernel is squared-exponential with a single
shared lengthscale over a one-hot expansion of the encoded genome (which on
binary features is a monotone transform of Hamming distance).  Hyperparameters
maximize the log marginal likelihood via a seeded multi-start bounded
derivative-free search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .search_space import (
    NUM_OPERATIONS,
    CellGenome,
    encode,
    input_bound,
)

# Jitter ladder tried when the covariance factorization fails.
_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)

# log-space hyperparameter bounds: lengthscale, signal variance, noise variance.
DEFAULT_BOUNDS = ((0.1, 100.0), (0.01, 10.0), (1e-6, 1.0))


class GPError(RuntimeError):
    """Numerical failure or misuse of the GP surrogate."""


def feature_dim(num_blocks: int) -> int:
    return sum(2 * input_bound(b) for b in range(num_blocks)) + 2 * NUM_OPERATIONS * num_blocks


def featurize(genome: CellGenome) -> np.ndarray:
    """One-hot expansion of the encoded genome; exactly one 1 per field.

    Layout is block-major: per block, input1 over its legal set, input2,
    then the two operation fields over the 8 codes.  5 blocks give 120 dims.
    """
    vec = encode(genome)
    out = np.zeros(feature_dim(genome.num_blocks))
    offset = 0
    for b in range(genome.num_blocks):
        i1, i2, o1, o2 = vec[4 * b : 4 * b + 4]
        bound = input_bound(b)
        for width, value in ((bound, i1), (bound, i2), (NUM_OPERATIONS, o1), (NUM_OPERATIONS, o2)):
            out[offset + value] = 1.0
            offset += width
    return out


def featurize_batch(genomes: list[CellGenome]) -> np.ndarray:
    if not genomes:
        raise ValueError("no genomes to featurize")
    nb = genomes[0].num_blocks
    if any(g.num_blocks != nb for g in genomes):
        raise ValueError("all genomes in a batch must have the same block count")
    return np.stack([featurize(g) for g in genomes])


@dataclass(frozen=True)
class KernelParams:
    lengthscale: float
    signal_variance: float
    noise_variance: float

    def __post_init__(self) -> None:
        if self.lengthscale <= 0 or self.signal_variance <= 0:
            raise ValueError("lengthscale and signal_variance must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")


def kernel(a: np.ndarray, b: np.ndarray, params: KernelParams) -> float:
    """Squared-exponential covariance: sv * exp(-||a-b||^2 / (2 l^2))."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    sq = float(np.sum((a - b) ** 2))
    return params.signal_variance * float(np.exp(-sq / (2.0 * params.lengthscale**2)))


def kernel_matrix(A: np.ndarray, B: np.ndarray, params: KernelParams) -> np.ndarray:
    sq = cdist(np.atleast_2d(A), np.atleast_2d(B), metric="sqeuclidean")
    return params.signal_variance * np.exp(-sq / (2.0 * params.lengthscale**2))


def _cholesky_with_jitter(cov: np.ndarray) -> tuple[np.ndarray, float]:
    for jitter in _JITTERS:
        try:
            L = cholesky(cov + jitter * np.eye(cov.shape[0]), lower=True, check_finite=False)
            return L, jitter
        except np.linalg.LinAlgError:
            continue
    raise GPError("covariance not positive definite after maximum jitter 1e-6")


def _lml_from_sq_dists(sq: np.ndarray, y: np.ndarray, params: KernelParams) -> float:
    n = y.shape[0]
    cov = params.signal_variance * np.exp(-sq / (2.0 * params.lengthscale**2))
    cov[np.diag_indices_from(cov)] += params.noise_variance
    L, _ = _cholesky_with_jitter(cov)
    alpha = cho_solve((L, True), y, check_finite=False)
    return float(
        -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2.0 * np.pi)
    )


def log_marginal_likelihood(params: KernelParams, X: np.ndarray, y: np.ndarray) -> float:
    """-1/2 y^T (K+s2 I)^-1 y - 1/2 log det(K+s2 I) - n/2 log(2 pi)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0] or y.shape[0] < 1:
        raise ValueError("X and y must agree and be non-empty")
    sq = cdist(X, X, metric="sqeuclidean")
    return _lml_from_sq_dists(sq, y, params)


class GPModel:
    """Fitted GP: training features, standardized targets, cached Cholesky factor."""

    def __init__(self, X: np.ndarray, y_raw: np.ndarray, params: KernelParams, standardize: bool = True):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        y_raw = np.asarray(y_raw, dtype=float).ravel()
        if self.X.shape[0] != y_raw.shape[0] or y_raw.shape[0] < 1:
            raise ValueError("X and y must agree and be non-empty")
        self.y_raw = y_raw
        if standardize:
            self.target_mean = float(np.mean(y_raw))
            std = float(np.std(y_raw))
            # Constant targets degenerate to std 0; clamp so the model stays defined.
            self.target_std = std if std > 1e-12 else 1.0
        else:
            self.target_mean = 0.0
            self.target_std = 1.0
        self.y = (y_raw - self.target_mean) / self.target_std

        cov = kernel_matrix(self.X, self.X, params)
        cov[np.diag_indices_from(cov)] += params.noise_variance
        L, jitter = _cholesky_with_jitter(cov)
        # Fold any jitter into the stored noise so L L^T reproduces K + noise*I.
        self.params = KernelParams(
            params.lengthscale, params.signal_variance, params.noise_variance + jitter
        )
        self.L = L
        self.alpha = cho_solve((L, True), self.y, check_finite=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def predict_features(self, F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance (de-standardized, variance clamped at 0)."""
        F = np.atleast_2d(np.asarray(F, dtype=float))
        k_star = kernel_matrix(F, self.X, self.params)
        mean = k_star @ self.alpha
        v = solve_triangular(self.L, k_star.T, lower=True, check_finite=False)
        var = self.params.signal_variance - np.sum(v**2, axis=0)
        var = np.maximum(var, 0.0)
        return (
            self.target_mean + self.target_std * mean,
            self.target_std**2 * var,
        )

    def predict(self, genome: CellGenome) -> tuple[float, float]:
        mean, var = self.predict_features(featurize(genome)[None, :])
        return float(mean[0]), float(var[0])


def predict(model: GPModel, genome: CellGenome) -> tuple[float, float]:
    return model.predict(genome)


def fit(
    X: np.ndarray,
    y_raw: np.ndarray,
    n_starts: int = 8,
    seed=0,
    bounds=DEFAULT_BOUNDS,
    maxfev: int = 60,
) -> GPModel:
    """Standardize targets and pick hyperparameters by maximum marginal likelihood.

    Starting points are ``n_starts`` log-uniform draws from ``seed`` plus one
    median-distance heuristic; all are probed, and bounded Powell searches run
    from the three most promising.  Deterministic for a fixed seed.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y_raw = np.asarray(y_raw, dtype=float).ravel()
    if y_raw.shape[0] < 2:
        raise GPError("fit requires at least 2 observations")

    mean = float(np.mean(y_raw))
    std = float(np.std(y_raw))
    if std <= 1e-12:
        std = 1.0
    y = (y_raw - mean) / std
    sq = cdist(X, X, metric="sqeuclidean")
    # One-hot features take few distinct pairwise distances; exponentiate the
    # unique values once per likelihood evaluation instead of all n^2 entries.
    uniq, inverse = np.unique(sq, return_inverse=True)
    inverse = inverse.reshape(sq.shape)
    n = y.shape[0]
    log_2pi_term = 0.5 * n * np.log(2.0 * np.pi)

    def neg_lml(theta: np.ndarray) -> float:
        lengthscale, signal, noise = np.exp(theta)
        cov = signal * np.exp(-uniq / (2.0 * lengthscale**2))[inverse]
        cov[np.diag_indices_from(cov)] += noise
        try:
            L, _ = _cholesky_with_jitter(cov)
        except GPError:
            return np.inf
        alpha = cho_solve((L, True), y, check_finite=False)
        return float(0.5 * y @ alpha + np.sum(np.log(np.diag(L))) + log_2pi_term)

    log_bounds = np.log(np.asarray(bounds, dtype=float))
    rng = np.random.default_rng(seed)
    starts = rng.uniform(log_bounds[:, 0], log_bounds[:, 1], size=(n_starts, 3))
    # Plus one heuristic start: median-distance lengthscale, unit signal.
    positive = uniq[uniq > 0]
    med = float(np.sqrt(np.median(positive))) if positive.size else 1.0
    heuristic = np.log(np.clip([med, 1.0, 1e-2], *np.asarray(bounds, dtype=float).T))
    starts = np.vstack([heuristic, starts])
    # Probe all starts, run the local search only from the most promising ones.
    probes = np.array([neg_lml(theta0) for theta0 in starts])
    best_theta = None
    best_val = np.inf
    for idx in np.argsort(probes)[:3]:
        res = minimize(
            neg_lml,
            starts[idx],
            method="Powell",
            bounds=log_bounds,
            options={"maxfev": maxfev, "xtol": 1e-3, "ftol": 1e-4},
        )
        if res.fun < best_val:
            best_val = res.fun
            best_theta = res.x
    if best_theta is None or not np.isfinite(best_val):
        raise GPError("hyperparameter search failed for all starts")
    return GPModel(X, y_raw, KernelParams(*np.exp(best_theta)), standardize=True)
