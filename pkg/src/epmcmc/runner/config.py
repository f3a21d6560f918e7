"""Experiment configuration loaded from a YAML file.

Schema (every key optional; defaults shown)::

    seed: 0                      # base seed; other seeds derive from it
    output: runs/experiment      # output directory
    model:                       # passed to model_from_dict
      kind: gaussian_conjugate   # gaussian_conjugate | logistic_regression |
      dim: 2                     # gaussian_mixture_means | poisson_gamma
    data:
      N: 10000
      seed: null                 # generation seed (default: seed)
      true_params: null          # default: drawn by the model
      options: {}                # extra generate() options, e.g. separation
    M: 8
    partition_seed: null         # default: seed + 1
    sampler:
      iterations: 50000
      proposal_scale: 0.1
      adapt: true
      adapt_steps: 2000
      adapt_window: 100
      permute_labels: false      # label-switching move for mixture models
      init: null                 # default: prior mean
    combine:
      methods: [parametric, nonparametric, semiparametric, subpost_avg, regularChain]
      T_out: null                # default: smallest post-burn-in set
      schedule: {rule: annealed, beta: 2.0, h: null}
      whiten: false
      symmetrize_labels: false   # random relabeling of every output (mixtures)
    groundtruth:
      kind: chain                # chain | analytic (conjugate model only)
      iterations: 200000
      samples: 50000             # number of analytic draws when kind=analytic
    evaluation:
      checkpoints: null          # strictly increasing; default: 6 even steps
      unit: seconds              # seconds | samples
      clock: work                # work (deterministic cost model) | wall
      seconds_per_record: 5.0e-8 # work clock: one record log-likelihood
      seconds_per_op: 5.0e-9     # work clock: one combination arithmetic op
      transfer: model            # model (bytes / bytes_per_second) | measured
      bytes_per_second: 1.0e8
      regular_iterations: null   # full-data chain length; default: sampler.iterations
      metric: l2                 # l2 | accuracy (logistic regression only)
      test_size: 2000            # held-out records for metric=accuracy
      grid_points: 512
      max_points: 5000
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..combine import METHODS, BandwidthSchedule
from ..model import MODEL_KINDS, model_from_dict
from ..sampler import MHConfig, SamplerError

REGULAR_CHAIN = "regularChain"
SAMPLER_DEFAULTS = {"iterations": 50_000, "proposal_scale": 0.1, "adapt": True}
ALL_METHODS = METHODS + (REGULAR_CHAIN,)


class ConfigError(ValueError):
    """The experiment configuration is invalid."""


def _section(raw: dict, key: str, allowed: set[str]) -> dict:
    sec = raw.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"'{key}' must be a mapping")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in '{key}': {sorted(unknown)}")
    return sec


@dataclass(frozen=True)
class ExperimentConfig:
    model: dict = field(default_factory=lambda: {"kind": "gaussian_conjugate", "dim": 2})
    N: int = 10_000
    data_seed: int | None = None
    true_params: list | None = None
    data_options: dict = field(default_factory=dict)
    M: int = 8
    partition_seed: int | None = None
    seed: int = 0
    sampler: dict = field(default_factory=dict)
    init: list | None = None
    methods: tuple = ("parametric", "nonparametric", "semiparametric", "subpost_avg", REGULAR_CHAIN)
    T_out: int | None = None
    schedule: dict = field(default_factory=lambda: {"rule": "annealed", "beta": 2.0, "h": None})
    whiten: bool = False
    symmetrize_labels: bool = False
    groundtruth: dict = field(default_factory=lambda: {"kind": "chain", "iterations": 200_000, "samples": 50_000})
    checkpoints: tuple | None = None
    unit: str = "seconds"
    clock: str = "work"
    seconds_per_record: float = 5e-8
    seconds_per_op: float = 5e-9
    transfer: str = "model"
    bytes_per_second: float = 1e8
    regular_iterations: int | None = None
    metric: str = "l2"
    test_size: int = 2000
    grid_points: int = 512
    max_points: int = 5000
    output: str = "runs/experiment"

    def __post_init__(self):
        try:
            self.build_model()
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"invalid model section: {exc}") from exc
        if self.N < 1:
            raise ConfigError("N must be positive")
        if not 1 <= self.M <= self.N:
            raise ConfigError(f"M must lie in [1, N], got {self.M}")
        bad = [m for m in self.methods if m not in ALL_METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {ALL_METHODS}")
        if not self.methods:
            raise ConfigError("at least one method is required")
        if self.checkpoints is not None:
            cps = list(self.checkpoints)
            if not cps:
                raise ConfigError("checkpoints must not be empty")
            if any(b <= a for a, b in zip(cps, cps[1:])):
                raise ConfigError(f"checkpoints must be strictly increasing, got {cps}")
            if cps[0] <= 0:
                raise ConfigError("checkpoints must be positive")
        choices = {
            "unit": ("seconds", "samples"),
            "clock": ("work", "wall"),
            "transfer": ("model", "measured"),
            "metric": ("l2", "accuracy"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}")
        if self.metric == "accuracy" and self.model.get("kind") != "logistic_regression":
            raise ConfigError("metric 'accuracy' needs the logistic_regression model")
        gt = self.groundtruth.get("kind", "chain")
        if gt not in ("chain", "analytic"):
            raise ConfigError("groundtruth.kind must be 'chain' or 'analytic'")
        if gt == "analytic" and self.model.get("kind") != "gaussian_conjugate":
            raise ConfigError("analytic groundtruth is only available for gaussian_conjugate")
        if self.T_out is not None and self.T_out < 1:
            raise ConfigError("T_out must be positive")
        self.mh_config()
        self.bandwidth()

    # -- derived objects -----------------------------------------------------

    def build_model(self):
        return model_from_dict(self.model)

    def mh_config(self, seed: int | None = None, iterations: int | None = None) -> MHConfig:
        opts = {**SAMPLER_DEFAULTS, **self.sampler}
        if iterations is not None:
            opts["iterations"] = iterations
        try:
            return MHConfig(seed=self.seed if seed is None else seed, **opts)
        except (SamplerError, ValueError, TypeError) as exc:
            raise ConfigError(f"invalid sampler section: {exc}") from exc

    def bandwidth(self) -> BandwidthSchedule:
        try:
            return BandwidthSchedule(**{k: v for k, v in self.schedule.items() if v is not None or k == "h"})
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid schedule: {exc}") from exc

    @property
    def generation_seed(self) -> int:
        return self.seed if self.data_seed is None else self.data_seed

    @property
    def shard_seed(self) -> int:
        return self.seed + 1 if self.partition_seed is None else self.partition_seed

    def with_overrides(self, **kw) -> "ExperimentConfig":
        d = asdict(self)
        d.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)


_SAMPLER_KEYS = {"iterations", "proposal_scale", "adapt", "adapt_steps", "adapt_window", "permute_labels", "init"}
_TOP_KEYS = {"seed", "output", "model", "data", "M", "partition_seed", "sampler", "combine", "groundtruth", "evaluation"}


def config_from_dict(raw: dict[str, Any] | None) -> ExperimentConfig:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    data = _section(raw, "data", {"N", "seed", "true_params", "options"})
    sampler = _section(raw, "sampler", _SAMPLER_KEYS)
    comb = _section(raw, "combine", {"methods", "T_out", "schedule", "whiten", "symmetrize_labels"})
    gt = _section(raw, "groundtruth", {"kind", "iterations", "samples"})
    ev = _section(
        raw,
        "evaluation",
        {
            "checkpoints", "unit", "clock", "seconds_per_record", "seconds_per_op", "transfer",
            "bytes_per_second", "regular_iterations", "metric", "test_size", "grid_points", "max_points",
        },
    )
    kw: dict[str, Any] = {}
    if "model" in raw:
        if not isinstance(raw["model"], dict) or raw["model"].get("kind") not in MODEL_KINDS:
            raise ConfigError(f"model.kind must be one of {sorted(MODEL_KINDS)}")
        kw["model"] = dict(raw["model"])
    for key in ("seed", "M", "partition_seed", "output"):
        if key in raw:
            kw[key] = raw[key]
    if "N" in data:
        kw["N"] = int(data["N"])
    if "seed" in data:
        kw["data_seed"] = data["seed"]
    if "true_params" in data:
        kw["true_params"] = data["true_params"]
    if "options" in data:
        kw["data_options"] = dict(data["options"] or {})
    sampler = dict(sampler)
    if "init" in sampler:
        kw["init"] = sampler.pop("init")
    kw["sampler"] = sampler
    if "methods" in comb:
        kw["methods"] = tuple(comb["methods"])
    for key in ("T_out", "whiten", "symmetrize_labels"):
        if key in comb:
            kw[key] = comb[key]
    if "schedule" in comb:
        kw["schedule"] = {"rule": "annealed", "beta": 2.0, "h": None, **(comb["schedule"] or {})}
    kw["groundtruth"] = {"kind": "chain", "iterations": 200_000, "samples": 50_000, **gt}
    if "checkpoints" in ev and ev["checkpoints"] is not None:
        kw["checkpoints"] = tuple(float(c) for c in ev.pop("checkpoints"))
    else:
        ev.pop("checkpoints", None)
    kw.update(ev)
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw)
