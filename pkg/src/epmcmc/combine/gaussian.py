"""Gaussian summaries of sample sets and their precision-weighted product."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .result import CombineError, CombineResult

JITTER = 1e-8
JITTER_FLOOR = 1e-12


@dataclass(frozen=True)
class GaussianFit:
    mean: np.ndarray
    cov: np.ndarray
    count: int = 0

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def regularize(cov: np.ndarray) -> np.ndarray:
    """Symmetrize and add ``max(1e-8 * trace / d, 1e-12) * I``."""
    cov = 0.5 * (cov + cov.T)
    d = cov.shape[0]
    jitter = max(JITTER * np.trace(cov) / d, JITTER_FLOOR)
    return cov + jitter * np.eye(d)


def as_sample_matrix(samples) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.ndim != 2:
        raise CombineError(f"expected a (T, d) sample matrix, got shape {samples.shape}")
    return samples


def fit_gaussian(samples) -> GaussianFit:
    """Sample mean and unbiased (divisor ``T - 1``) covariance, regularized."""
    x = as_sample_matrix(samples)
    T = x.shape[0]
    if T < 2:
        raise CombineError(f"need at least 2 samples to fit a Gaussian, got {T}")
    mean = x.mean(axis=0)
    r = x - mean
    return GaussianFit(mean, regularize(r.T @ r / (T - 1)), T)


def _precision(fit: GaussianFit, label) -> np.ndarray:
    try:
        L = np.linalg.cholesky(fit.cov)
    except np.linalg.LinAlgError:
        raise CombineError(f"covariance of machine {label} is not positive definite") from None
    Linv = np.linalg.solve(L, np.eye(fit.dim))
    P = Linv.T @ Linv
    if not np.all(np.isfinite(P)):
        raise CombineError(f"covariance of machine {label} is singular")
    return P


def product_fit(fits: list[GaussianFit]) -> GaussianFit:
    """Mean and covariance of the (normalized) product of Gaussian densities.

    ``cov = (sum_m cov_m^{-1})^{-1}`` and ``mean = cov @ sum_m cov_m^{-1} mean_m``.
    """
    if not fits:
        raise CombineError("no fits to combine")
    d = fits[0].dim
    if any(f.dim != d for f in fits):
        raise CombineError("fits have different dimensions")
    prec = np.zeros((d, d))
    shift = np.zeros(d)
    for m, f in enumerate(fits, start=1):
        P = _precision(f, m)
        prec += P
        shift += P @ f.mean
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    return GaussianFit(cov @ shift, cov, sum(f.count for f in fits))


def sample_gaussian(fit: GaussianFit, n: int, rng: np.random.Generator) -> np.ndarray:
    L = np.linalg.cholesky(fit.cov)
    return fit.mean + rng.standard_normal((n, fit.dim)) @ L.T


def parametric_combine(fits: list[GaussianFit], T_out: int, seed: int) -> CombineResult:
    """Draw ``T_out`` i.i.d. samples from the product of the per-machine Gaussians."""
    t0 = time.perf_counter()
    prod = product_fit(fits)
    samples = sample_gaussian(prod, int(T_out), np.random.default_rng(seed))
    d, M = prod.dim, len(fits)
    return CombineResult(
        samples=samples,
        method="parametric",
        wall_time=time.perf_counter() - t0,
        op_count=M * d**3 + int(T_out) * d**2,
        meta={"seed": seed, "mean": prod.mean.tolist(), "cov": prod.cov.tolist()},
    )


class RunningGaussian:
    """Streaming mean and covariance (Welford updates)."""

    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self._m2 = np.zeros((dim, dim))

    def push(self, x) -> None:
        x = np.asarray(x, dtype=float)
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self._m2 = self._m2 + np.outer(delta, x - self.mean)

    def fit(self) -> GaussianFit:
        if self.n < 2:
            raise CombineError(f"need at least 2 samples to fit a Gaussian, got {self.n}")
        return GaussianFit(self.mean.copy(), regularize(self._m2 / (self.n - 1)), self.n)
