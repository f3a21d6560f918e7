"""Sampling from kernel density-product estimates with an independent
Metropolis-within-Gibbs (IMG) chain over mixture-component indices.

The product of ``M`` Gaussian-kernel KDEs is a mixture of ``prod_m T_m``
Gaussians, one per index tuple ``t = (t_1, ..., t_M)`` that picks one sample
from every machine. The chain keeps one such tuple as its state; each sweep
redraws every machine's index uniformly (in machine order) and accepts by the
ratio of mixture weights, then one output sample is drawn from the selected
component. Indices are 0-based.
"""

from __future__ import annotations

import time

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import multivariate_normal

from .bandwidth import BandwidthSchedule
from .gaussian import GaussianFit, as_sample_matrix, fit_gaussian, product_fit, regularize
from .result import CombineError, CombineResult

_LOG_2PI = np.log(2.0 * np.pi)
WEIGHT_MODES = ("W", "w")


def _check_sets(sets) -> list[np.ndarray]:
    sets = [as_sample_matrix(s) for s in sets]
    if not sets:
        raise CombineError("no sample sets given")
    if any(s.shape[0] == 0 for s in sets):
        raise CombineError("every sample set must be nonempty")
    if len({s.shape[1] for s in sets}) != 1:
        raise CombineError("sample sets have different dimensions")
    return sets


def _select(t, sets) -> np.ndarray:
    if len(t) != len(sets):
        raise CombineError(f"index tuple has {len(t)} entries for {len(sets)} machines")
    rows = []
    for m, (tm, s) in enumerate(zip(t, sets)):
        if not 0 <= int(tm) < s.shape[0]:
            raise CombineError(f"index {tm} out of range for machine {m} with {s.shape[0]} samples")
        rows.append(s[int(tm)])
    return np.stack(rows)


def _log_w_from(M: int, d: int, S: float, h: float) -> float:
    return -0.5 * M * d * (_LOG_2PI + 2.0 * np.log(h)) - 0.5 * S / (h * h)


def log_w(t, sets, h: float) -> tuple[np.ndarray, float]:
    """Component mean and log mixture weight of index tuple ``t``.

    Returns ``(theta_bar, log w)`` with ``theta_bar`` the average of the selected
    samples and ``log w = sum_m log N(theta_m | theta_bar, h^2 I)``.
    """
    if h <= 0:
        raise CombineError("bandwidth must be positive")
    sets = _check_sets(sets)
    sel = _select(t, sets)
    bar = sel.mean(axis=0)
    r = sel - bar
    return bar, _log_w_from(sel.shape[0], sel.shape[1], float(np.sum(r * r)), h)


def semiparametric_params(t, sets, h: float, fits: list[GaussianFit], combined: GaussianFit | None = None):
    """Mean, covariance and log weight of the semiparametric mixture component ``t``.

    With ``(mu_M, Sigma_M)`` the product of the per-machine fits::

        Sigma_t = ((M / h^2) I + Sigma_M^{-1})^{-1}
        mu_t    = Sigma_t ((M / h^2) theta_bar + Sigma_M^{-1} mu_M)
        log W_t = log w_t + log N(theta_bar | mu_M, Sigma_M + (h^2 / M) I)
                  - sum_m log N(theta_m | mu_m, Sigma_m)
    """
    sets = _check_sets(sets)
    bar, lw = log_w(t, sets, h)
    M, d = len(sets), bar.shape[0]
    if len(fits) != M:
        raise CombineError(f"{len(fits)} fits for {M} machines")
    combined = product_fit(fits) if combined is None else combined
    try:
        prec_M = np.linalg.inv(combined.cov)
    except np.linalg.LinAlgError:
        raise CombineError("combined parametric covariance is singular") from None
    a = M / (h * h)
    cov_t = np.linalg.inv(a * np.eye(d) + prec_M)
    mean_t = cov_t @ (a * bar + prec_M @ combined.mean)
    sel = _select(t, sets)
    log_W = (
        lw
        + multivariate_normal.logpdf(bar, combined.mean, combined.cov + (h * h / M) * np.eye(d))
        - sum(multivariate_normal.logpdf(sel[m], f.mean, f.cov) for m, f in enumerate(fits))
    )
    return mean_t, 0.5 * (cov_t + cov_t.T), float(log_W)


def _log_normal_rows(x: np.ndarray, fit: GaussianFit) -> np.ndarray:
    L = np.linalg.cholesky(fit.cov)
    r = solve_triangular(L, (x - fit.mean).T, lower=True)
    return -0.5 * (x.shape[1] * _LOG_2PI + np.sum(r * r, axis=0)) - np.sum(np.log(np.diag(L)))


class _SemiTerms:
    """Product fit in its eigenbasis, so every bandwidth costs O(d^2)."""

    def __init__(self, combined: GaussianFit):
        lam, Q = np.linalg.eigh(combined.cov)
        if np.any(lam <= 0):
            raise CombineError("combined parametric covariance is singular")
        self.lam, self.Q, self.mu = lam, Q, combined.mean
        self.mu_rot = Q.T @ combined.mean
        self.d = lam.shape[0]

    def log_marginal(self, bar, h, M) -> float:
        v = self.lam + h * h / M
        r = self.Q.T @ (bar - self.mu)
        return -0.5 * (self.d * _LOG_2PI + np.sum(np.log(v)) + np.sum(r * r / v))

    def component(self, bar, h, M):
        a = M / (h * h)
        s = 1.0 / (a + 1.0 / self.lam)
        return self.Q @ (s * (a * (self.Q.T @ bar) + self.mu_rot / self.lam)), s


class _ComponentChain:
    """State of the IMG chain: selected indices, selected samples and cached weight."""

    def __init__(self, sets, idx, semi: _SemiTerms | None = None, fit_terms=None, weight_mode="w"):
        self.sets = sets
        self.M, self.d = len(sets), sets[0].shape[1]
        self.idx = np.array(idx, dtype=np.int64)
        self.sel = np.stack([s[i] for s, i in zip(sets, self.idx)])
        self.semi = semi
        self.use_W = semi is not None and weight_mode == "W"
        self.fit_terms = fit_terms
        self.n_evals = 0
        self.n_accept = 0
        self.bar = self.sel.mean(axis=0)
        r = self.sel - self.bar
        self.S = float(np.sum(r * r))
        self.g = 0.0
        self.h = None
        self.cur = None

    def fit_term(self, m, t) -> float:
        return self.fit_terms[m][t]

    def _score(self, bar, S, g, h) -> float:
        lw = _log_w_from(self.M, self.d, S, h)
        if self.use_W:
            lw += self.semi.log_marginal(bar, h, self.M) - g
        return lw

    def rescore(self, h: float) -> None:
        self.h = h
        if self.use_W:
            self.g = sum(self.fit_term(m, t) for m, t in enumerate(self.idx))
        self.cur = self._score(self.bar, self.S, self.g, h)

    def sweep(self, props, log_u, trace=None) -> None:
        sel, h = self.sel, self.h
        for m in range(self.M):
            c = int(props[m])
            old = sel[m].copy()
            sel[m] = self.sets[m][c]
            bar = sel.mean(axis=0)
            r = sel - bar
            S = float(np.sum(r * r))
            g = self.g - self.fit_term(m, self.idx[m]) + self.fit_term(m, c) if self.use_W else 0.0
            lw = self._score(bar, S, g, h)
            self.n_evals += 1
            if self.cur == -np.inf or log_u[m] < lw - self.cur:
                self.idx[m] = c
                self.bar, self.S, self.g, self.cur = bar, S, g, lw
                self.n_accept += 1
            else:
                sel[m] = old
            if trace is not None:
                trace.append(self.idx.copy())

    def emit(self, z) -> np.ndarray:
        if self.semi is None:
            return self.bar + (self.h / np.sqrt(self.M)) * z
        mean, s = self.semi.component(self.bar, self.h, self.M)
        return mean + self.semi.Q @ (np.sqrt(s) * z)


def _whitening(sets, fits=None):
    """Affine map ``z = L^{-1}(theta - mu)``.

    ``mu`` is the parametric product mean and ``L L^T`` the average
    subposterior covariance, so a unit bandwidth in ``z`` corresponds to the
    typical spread of a single machine's samples.
    """
    fits = [fit_gaussian(s) for s in sets] if fits is None else fits
    mu = product_fit(fits).mean
    L = np.linalg.cholesky(regularize(sum(f.cov for f in fits) / len(fits)))

    def fwd(x):
        return solve_triangular(L, (x - mu).T, lower=True).T

    def fwd_fit(f: GaussianFit) -> GaussianFit:
        A = solve_triangular(L, f.cov, lower=True)
        cov = solve_triangular(L, A.T, lower=True)
        return GaussianFit(fwd(f.mean[None, :])[0], 0.5 * (cov + cov.T), f.count)

    def back(z):
        return mu + z @ L.T

    return [fwd(s) for s in sets], [fwd_fit(f) for f in fits], back


def _run_img(sets, T_out, schedule, seed, semi=None, fit_terms=None, weight_mode="w", record=False):
    rng = np.random.default_rng(seed)
    Ts = [s.shape[0] for s in sets]
    M, d = len(sets), sets[0].shape[1]
    idx0 = [int(rng.integers(T)) for T in Ts]
    props = np.column_stack([rng.integers(T, size=T_out) for T in Ts])
    log_u = np.log1p(-rng.random((T_out, M)))
    z = rng.standard_normal((T_out, d))
    chain = _ComponentChain(sets, idx0, semi, fit_terms, weight_mode)
    trace = [] if record else None
    out = np.empty((T_out, d))
    T_ref = min(Ts)
    for i in range(T_out):
        chain.rescore(schedule(i + 1, d, T_ref))
        chain.sweep(props[i], log_u[i], trace)
        out[i] = chain.emit(z[i])
    components = np.array(trace, dtype=np.int64).reshape(-1, M) if record else None
    return out, chain, components


def _default_T_out(sets, T_out):
    T_out = min(s.shape[0] for s in sets) if T_out is None else int(T_out)
    if T_out < 1:
        raise CombineError("T_out must be >= 1")
    return T_out


def img_combine_nonparametric(
    sets,
    T_out: int | None = None,
    schedule: BandwidthSchedule = BandwidthSchedule(),
    seed: int = 0,
    whiten: bool = False,
    record_components: bool = False,
) -> CombineResult:
    """Asymptotically exact samples from the product of per-machine KDEs.

    One output per iteration ``i``: set ``h = schedule(i)``, run one systematic
    IMG sweep over the ``M`` machines, then draw from
    ``N(theta_bar_t, (h^2 / M) I)``. With ``whiten`` the chain runs on samples
    standardized by the average subposterior covariance, so the dimensionless
    bandwidth schedule is measured in units of a machine's posterior spread.
    """
    t0 = time.perf_counter()
    sets = _check_sets(sets)
    T_out = _default_T_out(sets, T_out)
    back = None
    if whiten:
        sets, _, back = _whitening(sets)
    out, chain, comps = _run_img(sets, T_out, schedule, seed, record=record_components)
    if back is not None:
        out = back(out)
    M, d = chain.M, chain.d
    return CombineResult(
        samples=out,
        method="nonparametric",
        accept_rate=chain.n_accept / chain.n_evals,
        n_weight_evals=chain.n_evals,
        wall_time=time.perf_counter() - t0,
        op_count=chain.n_evals * M * d + T_out * d,
        meta={"seed": seed, "schedule": schedule.describe(), "whiten": whiten},
        components=comps,
    )


def img_combine_semiparametric(
    sets,
    T_out: int | None = None,
    schedule: BandwidthSchedule = BandwidthSchedule(),
    seed: int = 0,
    weight_mode: str = "W",
    whiten: bool = False,
    fits: list[GaussianFit] | None = None,
    record_components: bool = False,
) -> CombineResult:
    """Samples from the semiparametric density-product estimate.

    Same chain as :func:`img_combine_nonparametric`, but components are
    ``N(mu_t, Sigma_t)`` and weights are ``W_t`` (``weight_mode="W"``) or the
    nonparametric ``w_t`` (``weight_mode="w"``), see :func:`semiparametric_params`.
    ``fits`` overrides the per-machine Gaussian fits.
    """
    if weight_mode not in WEIGHT_MODES:
        raise CombineError(f"weight_mode must be one of {WEIGHT_MODES}")
    t0 = time.perf_counter()
    sets = _check_sets(sets)
    T_out = _default_T_out(sets, T_out)
    fits = [fit_gaussian(s) for s in sets] if fits is None else list(fits)
    if len(fits) != len(sets):
        raise CombineError(f"{len(fits)} fits for {len(sets)} machines")
    back = None
    if whiten:
        sets, fits, back = _whitening(sets, fits)
    semi = _SemiTerms(product_fit(fits))
    fit_terms = [_log_normal_rows(s, f) for s, f in zip(sets, fits)] if weight_mode == "W" else None
    out, chain, comps = _run_img(sets, T_out, schedule, seed, semi, fit_terms, weight_mode, record_components)
    if back is not None:
        out = back(out)
    M, d = chain.M, chain.d
    return CombineResult(
        samples=out,
        method="semiparametric" if weight_mode == "W" else "semiparametric_w",
        accept_rate=chain.n_accept / chain.n_evals,
        n_weight_evals=chain.n_evals,
        wall_time=time.perf_counter() - t0,
        op_count=chain.n_evals * (M * d + d * d) + T_out * d * d + sum(s.shape[0] for s in sets) * d * d,
        meta={"seed": seed, "schedule": schedule.describe(), "weight_mode": weight_mode, "whiten": whiten},
        components=comps,
    )


PAIR_METHODS = ("nonparametric", "semiparametric")


def pairwise_combine(
    sets,
    T_out: int | None = None,
    schedule: BandwidthSchedule = BandwidthSchedule(),
    seed: int = 0,
    method: str = "nonparametric",
    weight_mode: str = "W",
    whiten: bool = False,
) -> CombineResult:
    """Combine sets two at a time until one set remains.

    Each round pairs adjacent sets (an odd last set passes through untouched)
    and runs the chosen IMG combiner with ``M = 2``. ``M`` sets take
    ``ceil(log2 M)`` rounds and ``M - 1`` pair combinations.
    """
    if method not in PAIR_METHODS:
        raise CombineError(f"pairwise method must be one of {PAIR_METHODS}")
    t0 = time.perf_counter()
    sets = _check_sets(sets)
    T_out = _default_T_out(sets, T_out)
    level = list(sets)
    n_evals = n_accept_evals = 0.0
    op_count = 0
    pairs = rounds = 0
    while len(level) > 1:
        nxt = []
        for j in range(0, len(level) - 1, 2):
            pair_seed = int(np.random.SeedSequence([seed, rounds, j]).generate_state(1)[0])
            if method == "nonparametric":
                res = img_combine_nonparametric(level[j:j + 2], T_out, schedule, pair_seed, whiten)
            else:
                res = img_combine_semiparametric(level[j:j + 2], T_out, schedule, pair_seed, weight_mode, whiten)
            nxt.append(res.samples)
            n_evals += res.n_weight_evals
            n_accept_evals += res.accept_rate * res.n_weight_evals
            op_count += res.op_count
            pairs += 1
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
        rounds += 1
    return CombineResult(
        samples=level[0],
        method=f"pairwise_{method}",
        accept_rate=n_accept_evals / n_evals if n_evals else float("nan"),
        n_weight_evals=int(n_evals),
        wall_time=time.perf_counter() - t0,
        op_count=op_count,
        meta={"seed": seed, "schedule": schedule.describe(), "rounds": rounds, "pairs": pairs, "whiten": whiten},
    )
