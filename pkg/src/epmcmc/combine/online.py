"""Streaming combination: machines push samples one at a time to a single owner."""

from __future__ import annotations

import numpy as np

from .bandwidth import BandwidthSchedule
from .gaussian import GaussianFit, RunningGaussian, product_fit, sample_gaussian
from .img import _ComponentChain, _log_normal_rows, _SemiTerms
from .result import CombineError

ONLINE_METHODS = ("nonparametric", "semiparametric", "parametric")


class _Reservoir:
    def __init__(self, dim: int):
        self._buf = np.empty((64, dim))
        self.n = 0
        self.stats = RunningGaussian(dim)

    def push(self, x: np.ndarray) -> None:
        if self.n == self._buf.shape[0]:
            self._buf = np.concatenate([self._buf, np.empty_like(self._buf)])
        self._buf[self.n] = x
        self.n += 1
        self.stats.push(x)

    @property
    def samples(self) -> np.ndarray:
        return self._buf[: self.n]


class _OnlineChain(_ComponentChain):
    """Component chain whose per-machine Gaussian fits move as samples arrive."""

    def __init__(self, sets, idx, weight_mode="w"):
        super().__init__(sets, idx, weight_mode=weight_mode)
        self.fits: list[GaussianFit] | None = None

    def fit_term(self, m, t) -> float:
        return float(_log_normal_rows(self.sets[m][t : t + 1], self.fits[m])[0])


class OnlineCombiner:
    """Combine subposterior samples while the chains are still running.

    Samples arrive through :meth:`push` in each machine's generation order.
    Once every machine has contributed (two samples each for methods needing a
    Gaussian fit), one output sample is produced per ``M`` further pushes by
    running one IMG sweep against the current reservoirs. :meth:`pop_ready`
    returns what has been produced so far; :meth:`drain` tops the output up to
    ``T_out`` (default: the smallest reservoir) once all samples are in.

    Not thread-safe: a single owner must serialize calls.
    """

    def __init__(
        self,
        M: int,
        schedule: BandwidthSchedule = BandwidthSchedule(),
        method: str = "nonparametric",
        seed: int = 0,
        T_out: int | None = None,
        weight_mode: str = "W",
    ):
        if method not in ONLINE_METHODS:
            raise CombineError(f"online method must be one of {ONLINE_METHODS}")
        if M < 1:
            raise CombineError("M must be >= 1")
        self.M = int(M)
        self.schedule = schedule
        self.method = method
        self.weight_mode = weight_mode
        self.T_out = T_out
        self.rng = np.random.default_rng(seed)
        self._res: list[_Reservoir] | None = None
        self._chain: _OnlineChain | None = None
        self._since_warm = 0
        self._ready: list[np.ndarray] = []
        self.n_emitted = 0
        self.n_weight_evals = 0

    # -- state -------------------------------------------------------------

    @property
    def dim(self) -> int | None:
        return None if self._res is None else self._res[0].samples.shape[1]

    def reservoir(self, m: int) -> np.ndarray:
        self._check_m(m)
        return np.empty((0, 0)) if self._res is None else self._res[m - 1].samples.copy()

    def fits(self) -> list[GaussianFit]:
        if self._res is None:
            raise CombineError("no samples pushed yet")
        return [r.stats.fit() for r in self._res]

    def _check_m(self, m: int) -> None:
        if not 1 <= m <= self.M:
            raise CombineError(f"machine index {m} outside [1, {self.M}]")

    def _warm(self) -> bool:
        need = 1 if self.method == "nonparametric" else 2
        return self._res is not None and all(r.n >= need for r in self._res)

    # -- public API --------------------------------------------------------

    def push(self, m: int, theta) -> None:
        self._check_m(m)
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if self._res is None:
            self._res = [_Reservoir(theta.shape[0]) for _ in range(self.M)]
        if theta.shape != (self.dim,):
            raise CombineError(f"sample has shape {theta.shape}, expected ({self.dim},)")
        self._res[m - 1].push(theta)
        if not self._warm():
            return
        self._since_warm += 1
        if self._since_warm >= self.M and (self.T_out is None or self.n_emitted < self.T_out):
            self._since_warm = 0
            self._ready.append(self._step())

    def pop_ready(self) -> np.ndarray:
        out = np.array(self._ready).reshape(len(self._ready), -1) if self._ready else np.empty((0, self.dim or 0))
        self._ready = []
        return out

    def drain(self) -> np.ndarray:
        if not self._warm():
            raise CombineError("cannot drain before every machine has pushed samples")
        target = self.T_out if self.T_out is not None else min(r.n for r in self._res)
        while self.n_emitted < target:
            self._ready.append(self._step())
        return self.pop_ready()

    # -- internals ---------------------------------------------------------

    def _step(self) -> np.ndarray:
        sets = [r.samples for r in self._res]
        d = self.dim
        i = self.n_emitted + 1
        self.n_emitted += 1
        if self.method == "parametric":
            return sample_gaussian(product_fit(self.fits()), 1, self.rng)[0]
        if self._chain is None:
            idx = [int(self.rng.integers(s.shape[0])) for s in sets]
            self._chain = _OnlineChain(sets, idx, weight_mode=self.weight_mode)
        chain = self._chain
        chain.sets = sets
        if self.method == "semiparametric":
            chain.fits = self.fits()
            chain.semi = _SemiTerms(product_fit(chain.fits))
            chain.use_W = self.weight_mode == "W"
        h = self.schedule(i, d, min(s.shape[0] for s in sets))
        chain.rescore(h)
        props = [int(self.rng.integers(s.shape[0])) for s in sets]
        log_u = np.log1p(-self.rng.random(self.M))
        before = chain.n_evals
        chain.sweep(props, log_u)
        self.n_weight_evals += chain.n_evals - before
        return chain.emit(self.rng.standard_normal(d))
