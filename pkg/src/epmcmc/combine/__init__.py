"""Strategies for turning per-machine subposterior samples into full-posterior samples."""

from .bandwidth import BandwidthSchedule
from .baselines import subpost_avg, subpost_pool, symmetrize_labels
from .gaussian import GaussianFit, RunningGaussian, fit_gaussian, parametric_combine, product_fit, regularize
from .img import (
    img_combine_nonparametric,
    img_combine_semiparametric,
    log_w,
    pairwise_combine,
    semiparametric_params,
)
from .online import OnlineCombiner
from .result import CombineError, CombineResult

METHODS = (
    "parametric",
    "nonparametric",
    "semiparametric",
    "semiparametric_w",
    "pairwise_nonparametric",
    "pairwise_semiparametric",
    "subpost_avg",
    "subpost_pool",
)


def combine(method: str, sets, T_out=None, schedule=BandwidthSchedule(), seed: int = 0, whiten: bool = False):
    """Dispatch to a combination method by name (see ``METHODS``)."""
    if method == "parametric":
        T_out = min(len(s) for s in sets) if T_out is None else T_out
        return parametric_combine([fit_gaussian(s) for s in sets], T_out, seed)
    if method == "nonparametric":
        return img_combine_nonparametric(sets, T_out, schedule, seed, whiten)
    if method in ("semiparametric", "semiparametric_w"):
        mode = "W" if method == "semiparametric" else "w"
        return img_combine_semiparametric(sets, T_out, schedule, seed, mode, whiten)
    if method.startswith("pairwise_"):
        return pairwise_combine(sets, T_out, schedule, seed, method[len("pairwise_"):], whiten=whiten)
    if method == "subpost_avg":
        return subpost_avg(sets, seed, T_out)
    if method == "subpost_pool":
        return subpost_pool(sets)
    raise CombineError(f"unknown combination method {method!r}; choose from {METHODS}")


__all__ = [
    "BandwidthSchedule",
    "CombineError",
    "CombineResult",
    "GaussianFit",
    "METHODS",
    "OnlineCombiner",
    "RunningGaussian",
    "combine",
    "fit_gaussian",
    "img_combine_nonparametric",
    "img_combine_semiparametric",
    "log_w",
    "pairwise_combine",
    "parametric_combine",
    "product_fit",
    "regularize",
    "semiparametric_params",
    "subpost_avg",
    "subpost_pool",
    "symmetrize_labels",
]
