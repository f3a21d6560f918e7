"""Target models, synthetic data, partitioning and (sub)posterior log-densities.

A subposterior for shard ``m`` of ``M`` is the posterior given that shard with
the prior raised to the power ``1/M``, so the product of all ``M``
subposteriors is proportional to the full-data posterior.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, ClassVar

import numpy as np
from scipy.special import gammaln, xlogy

__all__ = [
    "ModelError",
    "Dataset",
    "DataShard",
    "GaussianConjugate",
    "LogisticRegression",
    "GaussianMixtureMeans",
    "PoissonGamma",
    "Target",
    "MODEL_KINDS",
    "as_param",
    "model_from_dict",
    "partition",
    "subposterior_log_density",
    "full_log_density",
    "full_target",
    "subposterior_target",
    "generate_synthetic",
]

_LOG_2PI = np.log(2.0 * np.pi)


class ModelError(ValueError):
    """Invalid model input: bad dimension, non-finite parameter, bad partition."""


def as_param(theta, dim: int) -> np.ndarray:
    """Validate ``theta`` as a finite parameter vector of length ``dim``."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 0:
        theta = theta.reshape(1)
    if theta.shape != (dim,):
        raise ModelError(f"parameter has shape {theta.shape}, model expects ({dim},)")
    if not np.all(np.isfinite(theta)):
        raise ModelError("parameter vector has non-finite entries")
    return theta


# ---------------------------------------------------------------------------
# data containers


@dataclass(frozen=True)
class Dataset:
    """``N`` exchangeable observation records, one row per record."""

    records: np.ndarray
    model_id: str
    dataset_id: str = "dataset"
    seed: int | None = None
    truth: np.ndarray | None = None

    def __post_init__(self):
        records = np.asarray(self.records, dtype=float)
        if records.ndim == 1:
            records = records[:, None]
        if records.shape[0] < 1:
            raise ModelError("dataset must contain at least one record")
        object.__setattr__(self, "records", records)

    @property
    def N(self) -> int:
        return self.records.shape[0]


@dataclass(frozen=True)
class DataShard:
    """Shard ``index`` (1-based) of ``M`` disjoint shards of one dataset."""

    parent_id: str
    index: int
    M: int
    records: np.ndarray
    rows: np.ndarray | None = None

    def __post_init__(self):
        if not 1 <= self.index <= self.M:
            raise ModelError(f"shard index {self.index} outside [1, {self.M}]")

    @property
    def n(self) -> int:
        return self.records.shape[0]


def partition(dataset: Dataset, M: int, seed: int) -> list[DataShard]:
    """Split ``dataset`` into ``M`` disjoint, size-balanced shards.

    Records are shuffled by a seeded uniform permutation and then cut into
    contiguous blocks whose sizes differ by at most one.
    """
    M = int(M)
    if M < 1:
        raise ModelError(f"number of shards must be >= 1, got {M}")
    if M > dataset.N:
        raise ModelError(f"cannot split {dataset.N} records into {M} nonempty shards")
    perm = np.random.default_rng(seed).permutation(dataset.N)
    return [
        DataShard(dataset.dataset_id, m + 1, M, dataset.records[rows], rows=rows)
        for m, rows in enumerate(np.array_split(perm, M))
    ]


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class GaussianConjugate:
    """Unknown mean of isotropic Gaussian data with a conjugate Gaussian prior.

    ``x_i ~ N(theta, lik_var * I)`` and ``theta ~ N(prior_mean * 1, prior_var * I)``.
    """

    dim: int = 1
    prior_mean: float = 0.0
    prior_var: float = 100.0
    lik_var: float = 1.0

    kind: ClassVar[str] = "gaussian_conjugate"
    label_blocks: ClassVar[int | None] = None

    @property
    def record_width(self) -> int:
        return self.dim

    def log_prior(self, theta: np.ndarray) -> float:
        r = theta - self.prior_mean
        return float(-0.5 * (r @ r) / self.prior_var - 0.5 * self.dim * (_LOG_2PI + np.log(self.prior_var)))

    def record_log_lik(self, records: np.ndarray, theta: np.ndarray) -> np.ndarray:
        r = records - theta
        return -0.5 * np.einsum("ij,ij->i", r, r) / self.lik_var - 0.5 * self.dim * (
            _LOG_2PI + np.log(self.lik_var)
        )

    def log_lik(self, records: np.ndarray, theta: np.ndarray) -> float:
        return float(np.sum(self.record_log_lik(records, theta)))

    def init_point(self) -> np.ndarray:
        return np.full(self.dim, float(self.prior_mean))

    def posterior(self, records: np.ndarray, prior_weight: float = 1.0) -> tuple[np.ndarray, float]:
        """Closed-form (mean, isotropic variance) of the tempered-prior posterior."""
        n = records.shape[0]
        precision = prior_weight / self.prior_var + n / self.lik_var
        var = 1.0 / precision
        mean = var * (records.sum(axis=0) / self.lik_var + prior_weight * self.prior_mean / self.prior_var)
        return mean, var

    def generate(self, N: int, rng: np.random.Generator, truth=None, **_: Any):
        if truth is None:
            truth = rng.normal(self.prior_mean, 1.0, size=self.dim)
        truth = as_param(truth, self.dim)
        records = truth + np.sqrt(self.lik_var) * rng.standard_normal((N, self.dim))
        return records, truth

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "prior_mean": self.prior_mean,
                "prior_var": self.prior_var, "lik_var": self.lik_var}


@dataclass(frozen=True)
class LogisticRegression:
    """Bayesian logistic regression without intercept.

    Records are ``[x_1, ..., x_d, y]`` with ``y`` in {0, 1}; coefficients have
    independent ``N(0, prior_scale**2)`` priors.
    """

    dim: int = 2
    prior_scale: float = 10.0

    kind: ClassVar[str] = "logistic_regression"
    label_blocks: ClassVar[int | None] = None

    @property
    def record_width(self) -> int:
        return self.dim + 1

    def log_prior(self, theta: np.ndarray) -> float:
        s2 = self.prior_scale**2
        return float(-0.5 * (theta @ theta) / s2 - 0.5 * self.dim * (_LOG_2PI + np.log(s2)))

    def record_log_lik(self, records: np.ndarray, theta: np.ndarray) -> np.ndarray:
        eta = records[:, :-1] @ theta
        y = records[:, -1]
        return y * eta - np.logaddexp(0.0, eta)

    def log_lik(self, records: np.ndarray, theta: np.ndarray) -> float:
        return float(np.sum(self.record_log_lik(records, theta)))

    def init_point(self) -> np.ndarray:
        return np.zeros(self.dim)

    def generate(self, N: int, rng: np.random.Generator, truth=None, **_: Any):
        if truth is None:
            truth = rng.standard_normal(self.dim)
        truth = as_param(truth, self.dim)
        X = rng.standard_normal((N, self.dim))
        p = 1.0 / (1.0 + np.exp(-(X @ truth)))
        y = (rng.random(N) < p).astype(float)
        return np.column_stack([X, y]), truth

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "prior_scale": self.prior_scale}


@dataclass(frozen=True)
class GaussianMixtureMeans:
    """Equal-weight mixture of ``K`` isotropic Gaussians with unknown means.

    The parameter is the stacked ``K * data_dim`` vector of component means;
    weights and the component variance are known. Relabeling the components
    leaves the posterior unchanged, so it has (at least) ``K!`` modes.
    """

    K: int = 2
    data_dim: int = 1
    component_var: float = 1.0
    prior_scale: float = 10.0

    kind: ClassVar[str] = "gaussian_mixture_means"

    @property
    def dim(self) -> int:
        return self.K * self.data_dim

    @property
    def label_blocks(self) -> int:
        return self.K

    @property
    def record_width(self) -> int:
        return self.data_dim

    def means(self, theta: np.ndarray) -> np.ndarray:
        return theta.reshape(self.K, self.data_dim)

    def log_prior(self, theta: np.ndarray) -> float:
        s2 = self.prior_scale**2
        return float(-0.5 * (theta @ theta) / s2 - 0.5 * self.dim * (_LOG_2PI + np.log(s2)))

    def record_log_lik(self, records: np.ndarray, theta: np.ndarray) -> np.ndarray:
        mu = self.means(theta)
        # (N, K) squared distances
        sq = (records**2).sum(1)[:, None] - 2.0 * records @ mu.T + (mu**2).sum(1)[None, :]
        comp = -0.5 * sq / self.component_var
        const = -np.log(self.K) - 0.5 * self.data_dim * (_LOG_2PI + np.log(self.component_var))
        top = comp.max(axis=1)
        return top + np.log(np.exp(comp - top[:, None]).sum(axis=1)) + const

    def log_lik(self, records: np.ndarray, theta: np.ndarray) -> float:
        return float(np.sum(self.record_log_lik(records, theta)))

    def init_point(self) -> np.ndarray:
        return np.zeros(self.dim)

    def generate(self, N: int, rng: np.random.Generator, truth=None, **_: Any):
        if truth is None:
            truth = rng.normal(0.0, 3.0, size=self.dim)
        truth = as_param(truth, self.dim)
        labels = rng.integers(self.K, size=N)
        noise = np.sqrt(self.component_var) * rng.standard_normal((N, self.data_dim))
        return self.means(truth)[labels] + noise, truth

    def to_dict(self) -> dict:
        return {"kind": self.kind, "K": self.K, "data_dim": self.data_dim,
                "component_var": self.component_var, "prior_scale": self.prior_scale}


@dataclass(frozen=True)
class PoissonGamma:
    """Hierarchical Poisson-gamma model with the per-record rates integrated out.

    ``a ~ Exp(rate)``, ``b ~ Gamma(shape, rate=gamma_rate)``, ``q_i ~ Gamma(a, b)``,
    ``x_i ~ Poisson(q_i t_i)``. Marginally each count is negative binomial in
    ``(a, b)``. The sampled parameter is ``(log a, log b)``; the log-prior
    includes the Jacobian of that transform. Records are ``[x_i, t_i]``.
    """

    rate: float = 1.0
    shape: float = 2.0
    gamma_rate: float = 1.0

    kind: ClassVar[str] = "poisson_gamma"
    label_blocks: ClassVar[int | None] = None
    dim: ClassVar[int] = 2

    @property
    def record_width(self) -> int:
        return 2

    def log_prior(self, theta: np.ndarray) -> float:
        u, v = theta
        a, b = np.exp(u), np.exp(v)
        log_pa = np.log(self.rate) - self.rate * a
        log_pb = (self.shape * np.log(self.gamma_rate) - gammaln(self.shape)
                  + (self.shape - 1.0) * v - self.gamma_rate * b)
        return float(log_pa + u + log_pb + v)

    def record_log_lik(self, records: np.ndarray, theta: np.ndarray) -> np.ndarray:
        a, b = np.exp(theta)
        x, t = records[:, 0], records[:, 1]
        log_bt = np.log(b + t)
        return (gammaln(x + a) - gammaln(a) - gammaln(x + 1.0)
                + a * (np.log(b) - log_bt) + xlogy(x, t) - x * log_bt)

    def log_lik(self, records: np.ndarray, theta: np.ndarray) -> float:
        return float(np.sum(self.record_log_lik(records, theta)))

    def init_point(self) -> np.ndarray:
        # log of the prior means of a and b
        return np.log([1.0 / self.rate, self.shape / self.gamma_rate])

    def generate(self, N: int, rng: np.random.Generator, truth=None, exposures=None, **_: Any):
        if truth is None:
            truth = np.log([2.0, 1.0])
        truth = as_param(truth, 2)
        a, b = np.exp(truth)
        if exposures is None:
            t = rng.uniform(0.5, 2.0, size=N)
        else:
            t = np.broadcast_to(np.asarray(exposures, dtype=float), (N,)).copy()
        q = rng.gamma(a, 1.0 / b, size=N)
        x = rng.poisson(q * t)
        return np.column_stack([x.astype(float), t]), truth

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rate": self.rate, "shape": self.shape, "gamma_rate": self.gamma_rate}


MODEL_KINDS = {
    cls.kind: cls for cls in (GaussianConjugate, LogisticRegression, GaussianMixtureMeans, PoissonGamma)
}


def model_from_dict(params: dict):
    """Build a model from ``{"kind": ..., **params}``."""
    params = dict(params)
    kind = params.pop("kind", None)
    if kind not in MODEL_KINDS:
        raise ModelError(f"unsupported model kind {kind!r}; choose from {sorted(MODEL_KINDS)}")
    return MODEL_KINDS[kind](**params)


# ---------------------------------------------------------------------------
# densities


def _check_records(model, records: np.ndarray) -> np.ndarray:
    records = np.asarray(records, dtype=float)
    if records.ndim == 1:
        records = records[:, None]
    if records.shape[1] != model.record_width:
        raise ModelError(f"records have {records.shape[1]} fields, {model.kind} expects {model.record_width}")
    return records


def subposterior_log_density(model, shard: DataShard, theta) -> float:
    """``(1/M) log p(theta) + sum_{x in shard} log p(x | theta)``."""
    theta = as_param(theta, model.dim)
    records = _check_records(model, shard.records)
    return model.log_prior(theta) / shard.M + model.log_lik(records, theta)


def full_log_density(model, dataset: Dataset, theta) -> float:
    """Unnormalized full-data log posterior ``log p(theta) + sum_i log p(x_i | theta)``."""
    theta = as_param(theta, model.dim)
    records = _check_records(model, dataset.records)
    return model.log_prior(theta) + model.log_lik(records, theta)


@dataclass(frozen=True)
class Target:
    """Picklable unnormalized log-density over ``R^dim``.

    ``kind`` is ``"full_posterior"`` or ``"subposterior"``; for subposteriors
    ``m`` and ``M`` identify the shard.
    """

    model: Any
    records: np.ndarray
    prior_weight: float = 1.0
    kind: str = "full_posterior"
    m: int = 1
    M: int = 1
    info: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def n_records(self) -> int:
        return self.records.shape[0]

    def __call__(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            val = self.prior_weight * self.model.log_prior(theta) + self.model.log_lik(self.records, theta)
        return val if np.isfinite(val) or val == -np.inf else -np.inf


def full_target(model, dataset: Dataset) -> Target:
    return Target(model, _check_records(model, dataset.records), 1.0, "full_posterior", 1, 1)


def subposterior_target(model, shard: DataShard) -> Target:
    return Target(model, _check_records(model, shard.records), 1.0 / shard.M, "subposterior", shard.index, shard.M)


def generate_synthetic(model, N: int, seed: int, true_params=None, dataset_id: str | None = None, **options):
    """Draw ``N`` records from ``model``'s generative process.

    ``model`` is a model instance or a kind string (default hyperparameters).
    Returns ``(dataset, truth)``; the same seed always yields the same data.
    """
    if isinstance(model, str):
        model = model_from_dict({"kind": model})
    elif isinstance(model, dict):
        model = model_from_dict(model)
    if not hasattr(model, "generate"):
        raise ModelError(f"unsupported model {model!r}")
    N = int(N)
    if N < 1:
        raise ModelError("N must be >= 1")
    rng = np.random.default_rng(seed)
    records, truth = model.generate(N, rng, truth=true_params, **options)
    ds = Dataset(records, model.kind, dataset_id or f"{model.kind}_{seed}", seed=seed, truth=truth)
    return ds, truth
