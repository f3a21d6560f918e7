"""Density estimates and error metrics between sample sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import logsumexp

from .combine.gaussian import GaussianFit

__all__ = [
    "EstimateError",
    "DensityEstimate",
    "kde",
    "log_kde",
    "density_product_pdf",
    "silverman_bandwidth",
    "l2_distance",
    "mse_rate_harness",
    "loglog_slope",
]

_LOG_2PI = np.log(2.0 * np.pi)
GRID_POINTS = 512
_CHUNK = 4096
_BLOCK = 2_000_000


class EstimateError(ValueError):
    pass


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def _as_points(theta, d: int) -> tuple[np.ndarray, bool]:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim <= 1 and theta.size % d:
        raise EstimateError(f"evaluation point has {theta.size} coordinates, samples have dimension {d}")
    single = theta.ndim == 0 or (theta.ndim == 1 and d > 1) or (theta.ndim == 1 and theta.shape[0] == 1)
    pts = theta.reshape(-1, d) if theta.ndim <= 1 else theta
    if pts.shape[-1] != d:
        raise EstimateError(f"evaluation points have dimension {pts.shape[-1]}, samples have {d}")
    return pts, single


def log_kde(samples, h, theta):
    """Log of ``(1/T) sum_t N(theta | theta_t, diag(h^2))``; ``h`` scalar or per-dimension."""
    x = _as_matrix(samples)
    T, d = x.shape
    h = np.broadcast_to(np.asarray(h, dtype=float), (d,))
    if np.any(h <= 0):
        raise EstimateError("bandwidth must be positive")
    pts, single = _as_points(theta, d)
    const = -0.5 * d * _LOG_2PI - np.sum(np.log(h)) - np.log(T)
    out = np.empty(pts.shape[0])
    xs = x / h
    step = max(1, _BLOCK // (T * d))
    for a in range(0, pts.shape[0], step):
        diff = pts[a:a + step, None, :] / h - xs[None, :, :]
        out[a:a + step] = logsumexp(-0.5 * np.einsum("ijk,ijk->ij", diff, diff), axis=1) + const
    return out[0] if single else out


def kde(samples, h, theta):
    """Gaussian-kernel density estimate at ``theta`` (one point or a ``(n, d)`` array)."""
    return np.exp(log_kde(samples, h, theta))


def _grid_axes(lo, hi, n):
    return [np.linspace(a, b, n) for a, b in zip(lo, hi)]


def _integrate(values: np.ndarray, axes) -> float:
    out = values
    for ax in reversed(axes):
        out = trapezoid(out, ax, axis=-1)
    return float(out)


def _grid_points(axes) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def density_product_pdf(sets, h: float, theta, normalized: bool = False, max_components: float = 1e6,
                        grid_points: int = GRID_POINTS):
    """Product of per-machine KDEs, ``prod_m kde(set_m, h, theta)``.

    This is the density of a mixture of ``prod_m T_m`` Gaussians, so it is
    guarded to oracle scale by ``max_components``; use the IMG samplers in
    :mod:`epmcmc.combine` beyond that. With ``normalized`` the product is
    divided by its integral, computed by trapezoid quadrature (``d <= 2``).
    """
    sets = [_as_matrix(s) for s in sets]
    n_comp = float(np.prod([s.shape[0] for s in sets], dtype=float))
    if n_comp > max_components:
        raise EstimateError(
            f"density product has {n_comp:.3g} mixture components (limit {max_components:.3g}); "
            "draw samples with the IMG combiners instead"
        )
    d = sets[0].shape[1]
    if any(s.shape[1] != d for s in sets):
        raise EstimateError("sample sets have different dimensions")
    logp = sum(log_kde(s, h, theta) for s in sets)
    if not normalized:
        return np.exp(logp)
    if d > 2:
        raise EstimateError("quadrature normalization is only available for d <= 2")
    allx = np.concatenate(sets)
    axes = _grid_axes(allx.min(0) - 6 * h, allx.max(0) + 6 * h, grid_points)
    grid_logp = sum(log_kde(s, h, _grid_points(axes)) for s in sets)
    shift = grid_logp.max()
    Z = _integrate(np.exp(grid_logp - shift).reshape([grid_points] * d), axes)
    return np.exp(logp - shift) / Z


@dataclass(frozen=True)
class DensityEstimate:
    """An evaluable density: ``kde`` (samples, h), ``gaussian`` (fit) or ``product`` (parts)."""

    kind: str
    samples: np.ndarray | None = None
    h: np.ndarray | float | None = None
    fit: GaussianFit | None = None
    parts: tuple = ()
    normalized: bool = True

    def __call__(self, theta):
        if self.kind == "kde":
            return kde(self.samples, self.h, theta)
        if self.kind == "gaussian":
            d = self.fit.dim
            pts, single = _as_points(theta, d)
            L = np.linalg.cholesky(self.fit.cov)
            r = np.linalg.solve(L, (pts - self.fit.mean).T)
            val = np.exp(-0.5 * (r * r).sum(0) - 0.5 * d * _LOG_2PI - np.log(np.diag(L)).sum())
            return val[0] if single else val
        if self.kind == "product":
            return np.prod([p(theta) for p in self.parts], axis=0)
        raise EstimateError(f"unknown density kind {self.kind!r}")


def silverman_bandwidth(samples) -> np.ndarray:
    """Per-dimension Silverman rule ``sigma_j * (4 / ((d + 2) n)) ** (1 / (d + 4))``."""
    x = _as_matrix(samples)
    n, d = x.shape
    sigma = x.std(axis=0, ddof=1) if n > 1 else np.ones(d)
    sigma = np.where(sigma > 0, sigma, 1e-8 * max(1.0, np.abs(x).max()))
    return sigma * (4.0 / ((d + 2.0) * n)) ** (1.0 / (d + 4.0))


# -- L2 distance ------------------------------------------------------------


def _kernel_sum_1d(points: np.ndarray, centers: np.ndarray, h: float) -> np.ndarray:
    """``(1/n) sum_i N(points | centers_i, h^2)`` as a (G, n)-chunked dense sum."""
    out = np.zeros(points.shape[0])
    c = 1.0 / (np.sqrt(2.0 * np.pi) * h)
    for a in range(0, centers.shape[0], _CHUNK):
        diff = (points[:, None] - centers[None, a:a + _CHUNK]) / h
        out += np.exp(-0.5 * diff * diff).sum(1)
    return out * c / centers.shape[0]


def _kde_on_grid(x: np.ndarray, h: np.ndarray, axes) -> np.ndarray:
    """KDE with diagonal bandwidth on a product grid, using kernel separability."""
    n, d = x.shape
    if d == 1:
        return _kernel_sum_1d(axes[0], x[:, 0], h[0])
    out = np.zeros((axes[0].shape[0], axes[1].shape[0]))
    cx = 1.0 / (np.sqrt(2.0 * np.pi) * h[0])
    cy = 1.0 / (np.sqrt(2.0 * np.pi) * h[1])
    for a in range(0, n, _CHUNK):
        dx = (axes[0][:, None] - x[None, a:a + _CHUNK, 0]) / h[0]
        dy = (axes[1][:, None] - x[None, a:a + _CHUNK, 1]) / h[1]
        out += np.exp(-0.5 * dx * dx) @ np.exp(-0.5 * dy * dy).T
    return out * (cx * cy / n)


def _gauss_on_grid(fit: GaussianFit, axes) -> np.ndarray:
    dens = DensityEstimate("gaussian", fit=fit)
    return dens(_grid_points(axes)).reshape([a.shape[0] for a in axes])


def _cross_term(x, hx, y, hy) -> float:
    """``int kde_x * kde_y`` in closed form: mean of ``N(x_i - y_j | 0, diag(hx^2 + hy^2))``."""
    s = np.sqrt(hx * hx + hy * hy)
    xs, ys = x / s, y / s
    const = np.exp(-0.5 * x.shape[1] * _LOG_2PI - np.log(s).sum())
    total = 0.0
    step = max(1, _BLOCK // (ys.shape[0] * ys.shape[1]))
    for a in range(0, xs.shape[0], step):
        diff = xs[a:a + step, None, :] - ys[None, :, :]
        total += np.exp(-0.5 * np.einsum("ijk,ijk->ij", diff, diff)).sum()
    return const * total / (x.shape[0] * y.shape[0])


def _kde_gauss_cross(x, hx, fit: GaussianFit) -> float:
    cov = fit.cov + np.diag(hx * hx)
    return float(np.mean(DensityEstimate("gaussian", fit=GaussianFit(fit.mean, cov))(x).reshape(-1)))


def _gauss_self(fit: GaussianFit) -> float:
    d = fit.dim
    return float(np.exp(-0.5 * d * _LOG_2PI - 0.5 * np.linalg.slogdet(2.0 * fit.cov)[1]))


def _thin(x: np.ndarray, max_points: int | None) -> np.ndarray:
    if max_points is None or x.shape[0] <= max_points:
        return x
    return x[np.linspace(0, x.shape[0] - 1, max_points).round().astype(int)]


def l2_distance(p, q, method: str = "auto", grid_points: int = GRID_POINTS, max_points: int | None = 5000) -> float:
    """Estimated ``(int (p - q)^2)^{1/2}`` between two densities given by samples.

    Each sample set is smoothed with a Gaussian KDE using per-dimension
    Silverman bandwidths. Either argument may instead be a :class:`GaussianFit`,
    used as an exact density.

    ``method="grid"`` (default for ``d <= 2``) evaluates both densities on a
    ``grid_points``-per-dimension grid covering both sets plus three bandwidths
    and integrates by the trapezoid rule. ``method="analytic"`` (default for
    ``d > 2``) uses closed-form Gaussian-mixture integrals on sets thinned to at
    most ``max_points`` evenly spaced rows; a negative squared estimate is
    clamped to zero.
    """
    if isinstance(p, GaussianFit) and isinstance(q, GaussianFit):
        raise EstimateError("at least one argument must be a sample set")
    parts = []
    for arg in (p, q):
        if isinstance(arg, GaussianFit):
            parts.append(arg)
        else:
            x = _as_matrix(arg)
            if x.shape[0] == 0:
                raise EstimateError("sample sets must be nonempty")
            parts.append(x)
    dims = {a.dim if isinstance(a, GaussianFit) else a.shape[1] for a in parts}
    if len(dims) != 1:
        raise EstimateError("densities have different dimensions")
    d = dims.pop()
    if method == "auto":
        method = "grid" if d <= 2 else "analytic"
    if method == "grid":
        if d > 2:
            raise EstimateError("grid L2 estimate is only available for d <= 2")
        return _l2_grid(parts, grid_points)
    if method == "analytic":
        return _l2_analytic([a if isinstance(a, GaussianFit) else _thin(a, max_points) for a in parts])
    raise EstimateError(f"unknown L2 method {method!r}")


def _l2_grid(parts, grid_points: int) -> float:
    bws = [None if isinstance(a, GaussianFit) else silverman_bandwidth(a) for a in parts]
    lo, hi = [], []
    for a, h in zip(parts, bws):
        if isinstance(a, GaussianFit):
            sd = np.sqrt(np.diag(a.cov))
            lo.append(a.mean - 6 * sd)
            hi.append(a.mean + 6 * sd)
        else:
            lo.append(a.min(0) - 3 * h)
            hi.append(a.max(0) + 3 * h)
    axes = _grid_axes(np.minimum(*lo), np.maximum(*hi), grid_points)
    vals = [
        _gauss_on_grid(a, axes) if isinstance(a, GaussianFit) else _kde_on_grid(a, h, axes)
        for a, h in zip(parts, bws)
    ]
    diff = vals[0] - vals[1]
    return float(np.sqrt(max(_integrate(diff * diff, axes), 0.0)))


def _l2_analytic(parts) -> float:
    # canonical order so that l2(p, q) == l2(q, p) bit for bit
    def key(a):
        return (1, a.mean.tobytes()) if isinstance(a, GaussianFit) else (0, a.tobytes())

    a, b = sorted(parts, key=key)
    ha = None if isinstance(a, GaussianFit) else silverman_bandwidth(a)
    hb = None if isinstance(b, GaussianFit) else silverman_bandwidth(b)
    aa = _cross_term(a, ha, a, ha)
    if isinstance(b, GaussianFit):
        bb = _gauss_self(b)
        ab = _kde_gauss_cross(a, ha, b)
    else:
        bb = _cross_term(b, hb, b, hb)
        ab = aa if b is a or np.array_equal(a, b) else _cross_term(a, ha, b, hb)
    return float(np.sqrt(max(aa + bb - 2.0 * ab, 0.0)))


# -- MSE rate ---------------------------------------------------------------


def mse_rate_harness(true_densities, T_grid, trials: int = 20, beta: float = 2.0, seed: int = 0,
                     grid_points: int = 2048, normalized: bool = True):
    """Empirical integrated squared error of the KDE-product estimate versus ``T``.

    ``true_densities`` are ``M`` frozen one-dimensional scipy distributions.
    For each ``T`` and trial, ``T`` samples are drawn from every density, the
    bandwidth is ``h = T ** (-1 / (2 beta + 1))``, and the squared difference
    between the estimated and true products (both normalized on the grid when
    ``normalized``) is integrated by quadrature and averaged over trials.

    Returns a list of ``(T, mse)`` rows.
    """
    lo = min(dist.ppf(1e-7) for dist in true_densities)
    hi = max(dist.ppf(1 - 1e-7) for dist in true_densities)
    grid = np.linspace(lo, hi, grid_points)
    truth = np.prod([dist.pdf(grid) for dist in true_densities], axis=0)
    if normalized:
        truth = truth / trapezoid(truth, grid)
    rng = np.random.default_rng(seed)
    rows = []
    for T in T_grid:
        T = int(T)
        h = T ** (-1.0 / (2.0 * beta + 1.0))
        errs = []
        for _ in range(trials):
            est = np.ones_like(grid)
            for dist in true_densities:
                x = dist.rvs(size=T, random_state=rng)
                est = est * _kernel_sum_1d(grid, np.asarray(x, dtype=float), h)
            if normalized:
                est = est / trapezoid(est, grid)
            errs.append(trapezoid((est - truth) ** 2, grid))
        rows.append((T, float(np.mean(errs))))
    return rows


def loglog_slope(rows) -> float:
    """Least-squares slope of ``log(mse)`` against ``log(T)``."""
    T = np.log([r[0] for r in rows])
    y = np.log([r[1] for r in rows])
    return float(np.polyfit(T, y, 1)[0])
