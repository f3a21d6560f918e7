"""Baselines that combine subposterior samples without a density estimate."""

from __future__ import annotations

import time

import numpy as np

from .img import _check_sets
from .result import CombineError, CombineResult


def subpost_avg(sets, seed: int = 0, T_out: int | None = None) -> CombineResult:
    """Average one sample from each machine, ``min_m T_m`` times (or ``T_out`` if smaller).

    Each set's rows are independently shuffled (seeded) and truncated to the
    output size before row-wise averaging, so no row is used twice.
    """
    t0 = time.perf_counter()
    sets = _check_sets(sets)
    T = min(s.shape[0] for s in sets)
    if T_out is not None:
        if T_out < 1:
            raise CombineError("T_out must be positive")
        T = min(T, int(T_out))
    rng = np.random.default_rng(seed)
    acc = np.zeros((T, sets[0].shape[1]))
    for s in sets:
        acc += s[rng.permutation(s.shape[0])[:T]]
    M = len(sets)
    return CombineResult(
        samples=acc / M,
        method="subpost_avg",
        wall_time=time.perf_counter() - t0,
        op_count=T * M * sets[0].shape[1],
        meta={"seed": seed},
    )


def subpost_pool(sets) -> CombineResult:
    """Union of all sets; ``meta["source"]`` gives each row's machine (1-based)."""
    t0 = time.perf_counter()
    sets = _check_sets(sets)
    source = np.concatenate([np.full(s.shape[0], m, dtype=np.int64) for m, s in enumerate(sets, start=1)])
    samples = np.concatenate(sets, axis=0)
    return CombineResult(
        samples=samples,
        method="subpost_pool",
        wall_time=time.perf_counter() - t0,
        op_count=samples.size,
        meta={"source": source},
    )


def symmetrize_labels(samples, K: int, seed: int = 0) -> np.ndarray:
    """Relabel each row by an independent uniform permutation of its ``K`` blocks.

    For a posterior that is invariant under relabeling (mixture means with
    known equal weights) this turns draws from any density estimate into draws
    from its label-symmetrized version, which estimates the same posterior.
    """
    x = np.asarray(samples, dtype=float)
    T, d = x.shape
    if d % K:
        raise ValueError(f"dimension {d} is not a multiple of {K} label blocks")
    perms = np.random.default_rng(seed).random((T, K)).argsort(axis=1)
    blocks = x.reshape(T, K, d // K)
    return np.take_along_axis(blocks, perms[:, :, None], axis=1).reshape(T, d)
