"""Random-walk Metropolis-Hastings chains and the parallel subposterior fan-out."""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .model import DataShard, Target, subposterior_target

__all__ = [
    "SamplerError",
    "MHConfig",
    "ChainOutput",
    "SubposteriorSamples",
    "run_mh",
    "remove_burn_in",
    "burn_in_count",
    "run_subposteriors",
    "worker_limit",
    "WORKERS_ENV",
]

WORKERS_ENV = "EPMCMC_WORKERS"
BURN_IN = 1.0 / 6.0


class SamplerError(RuntimeError):
    """A chain could not be started or run."""


@dataclass(frozen=True)
class MHConfig:
    """Settings for one random-walk MH chain.

    ``proposal_scale`` is a scalar or per-dimension standard deviation of the
    Gaussian proposal. With ``adapt`` a pre-phase of ``adapt_steps`` iterations
    rescales it (doubling or halving every ``adapt_window`` steps) toward an
    acceptance rate in ``[0.15, 0.35]``; those iterations are discarded.
    """

    iterations: int = 10_000
    proposal_scale: float | tuple[float, ...] = 0.1
    seed: int = 0
    adapt: bool = False
    adapt_steps: int = 2000
    adapt_window: int = 100
    permute_labels: bool = False

    def __post_init__(self):
        if int(self.iterations) < 1:
            raise SamplerError("iterations must be >= 1")
        if np.any(np.asarray(self.proposal_scale, dtype=float) <= 0):
            raise SamplerError("proposal_scale entries must be > 0")


@dataclass
class ChainOutput:
    samples: np.ndarray
    n_accept: int
    n_nonfinite: int
    wall_time: float
    times: np.ndarray
    kind: str
    seed: int
    proposal_scale: np.ndarray
    adapt_iterations: int = 0
    adapt_time: float = 0.0

    @property
    def accept_rate(self) -> float:
        return self.n_accept / len(self.samples)


@dataclass
class SubposteriorSamples:
    """Post-burn-in samples of one machine plus provenance."""

    samples: np.ndarray
    m: int
    M: int
    seed: int
    model_id: str
    chain: ChainOutput | None = None
    meta: dict = field(default_factory=dict)

    @property
    def accept_rate(self) -> float:
        return self.chain.accept_rate if self.chain is not None else float("nan")

    @property
    def wall_time(self) -> float:
        return self.chain.wall_time if self.chain is not None else float("nan")


def _mh_segment(target, state, logp, scale, z, log_u, perms, K, counts, stamp=None, t0=0.0):
    """Run ``len(z)`` MH steps in place; returns (samples, state, logp)."""
    n, d = z.shape
    out = np.empty((n, d))
    for k in range(n):
        if perms is not None:
            state = state.reshape(K, -1)[perms[k]].ravel()
        prop = state + scale * z[k]
        lp = target(prop)
        if not np.isfinite(lp):
            counts[1] += 1
        elif log_u[k] < lp - logp:
            state, logp = prop, lp
            counts[0] += 1
        out[k] = state
        if stamp is not None:
            stamp[k] = time.perf_counter() - t0
    return out, state, logp


def run_mh(target: Target, init=None, cfg: MHConfig = MHConfig()) -> ChainOutput:
    """Gaussian random-walk Metropolis-Hastings on ``target``.

    Proposals are accepted with probability ``min(1, exp(delta log-density))``.
    Proposals with a non-finite log-density are rejected and counted in
    ``n_nonfinite``. With ``cfg.permute_labels`` the component-mean blocks of the
    current state are permuted uniformly at random before every proposal, which
    is a move between points of equal posterior density for label-symmetric
    mixture models.
    """
    d = target.dim
    state = np.array(target.model.init_point() if init is None else init, dtype=float).reshape(d)
    logp = target(state)
    if not np.isfinite(logp):
        raise SamplerError(f"initial point {state} is outside the support (log-density {logp})")
    K = None
    if cfg.permute_labels:
        K = target.model.label_blocks
        if not K:
            raise SamplerError(f"model {target.model.kind} has no component labels to permute")
    scale = np.broadcast_to(np.asarray(cfg.proposal_scale, dtype=float), (d,)).copy()
    rng = np.random.default_rng(cfg.seed)

    def draws(n):
        z = rng.standard_normal((n, d))
        log_u = np.log(rng.random(n))
        perms = rng.random((n, K)).argsort(axis=1) if K else None
        return z, log_u, perms

    t0 = time.perf_counter()
    adapt_iters = 0
    if cfg.adapt:
        for _ in range(max(1, cfg.adapt_steps // cfg.adapt_window)):
            counts = [0, 0]
            _, state, logp = _mh_segment(target, state, logp, scale, *draws(cfg.adapt_window), K, counts)
            adapt_iters += cfg.adapt_window
            rate = counts[0] / cfg.adapt_window
            if rate > 0.35:
                scale = scale * 2.0
            elif rate < 0.15:
                scale = scale / 2.0
    adapt_time = time.perf_counter() - t0

    counts = [0, 0]
    stamp = np.empty(cfg.iterations)
    samples, _, _ = _mh_segment(target, state, logp, scale, *draws(cfg.iterations), K, counts, stamp, t0)
    return ChainOutput(
        samples=samples,
        n_accept=counts[0],
        n_nonfinite=counts[1],
        wall_time=time.perf_counter() - t0,
        times=stamp,
        kind=target.kind,
        seed=cfg.seed,
        proposal_scale=scale,
        adapt_iterations=adapt_iters,
        adapt_time=adapt_time,
    )


def burn_in_count(T: int, fraction: float = BURN_IN) -> int:
    """``floor(fraction * T)``, computed exactly for rational fractions such as 1/6."""
    frac = Fraction(fraction).limit_denominator(10**6)
    return (int(T) * frac.numerator) // frac.denominator


def remove_burn_in(samples, fraction: float = BURN_IN) -> np.ndarray:
    """Drop the first ``floor(fraction * T)`` rows."""
    samples = np.asarray(samples)
    if samples.shape[0] == 0:
        raise SamplerError("cannot remove burn-in from an empty sample set")
    if not 0.0 <= fraction < 1.0:
        raise SamplerError(f"burn-in fraction must lie in [0, 1), got {fraction}")
    return samples[burn_in_count(samples.shape[0], fraction):]


def worker_limit(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, int(workers))


def _subposterior_job(model, shard: DataShard, cfg: MHConfig, init, burn_in: float) -> SubposteriorSamples:
    try:
        chain = run_mh(subposterior_target(model, shard), init, cfg)
    except Exception as exc:  # re-raised with the shard attached
        raise SamplerError(f"subposterior chain for shard {shard.index} of {shard.M} failed: {exc}") from exc
    return SubposteriorSamples(
        samples=remove_burn_in(chain.samples, burn_in),
        m=shard.index,
        M=shard.M,
        seed=cfg.seed,
        model_id=model.kind,
        chain=chain,
        meta={"n_records": shard.n, "parent_id": shard.parent_id},
    )


def run_subposteriors(
    model,
    shards: list[DataShard],
    cfg: MHConfig,
    base_seed: int,
    init=None,
    workers: int | None = None,
    burn_in: float = BURN_IN,
) -> list[SubposteriorSamples]:
    """Run one independent chain per shard with seed ``base_seed + m``.

    Chains share nothing; running them in a process pool (``workers > 1`` or
    the ``EPMCMC_WORKERS`` environment variable) gives the same output as
    running them serially.
    """
    if len({s.parent_id for s in shards}) > 1:
        raise SamplerError("shards come from different datasets")
    jobs = [(model, s, replace(cfg, seed=base_seed + s.index), init, burn_in) for s in shards]
    workers = min(worker_limit(workers), len(jobs))
    if workers == 1:
        return [_subposterior_job(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_subposterior_job, *job) for job in jobs]
        return [f.result() for f in futures]
