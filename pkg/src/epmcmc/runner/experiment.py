"""Error-versus-time protocol: sample in parallel, combine at checkpoints, score.

Two clocks are available. The ``wall`` clock uses measured ``perf_counter``
stamps, so tables vary from run to run. The default ``work`` clock charges a
fixed cost per record log-likelihood evaluation (sampling), per arithmetic
operation (combination) and per transferred byte. Tables built on it are
byte-identical for fixed seeds while keeping the relative costs that shape the
curves: a full-data iteration costs ``M`` times a subposterior iteration, and
combination cost grows with the operation counts of each method.
"""

from __future__ import annotations

import json
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy.special import expit

from .. import io
from ..combine import GaussianFit, combine, symmetrize_labels
from ..estimate import l2_distance
from ..model import full_target, generate_synthetic, partition
from ..sampler import ChainOutput, burn_in_count, run_mh, run_subposteriors
from .config import REGULAR_CHAIN, ExperimentConfig

BYTES_PER_VALUE = 8


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimingLedger:
    """Per-phase times of one combined estimate (seconds on the chosen clock).

    ``sampling`` is the parallel sampling time, the maximum over machines.
    """

    sampling: float
    transfer: float = 0.0
    combination: float = 0.0
    per_machine: tuple = ()

    def __post_init__(self):
        for name in ("sampling", "transfer", "combination"):
            if not getattr(self, name) >= 0.0:
                raise ValueError(f"{name} time must be nonnegative")
        if any(not t >= 0.0 for t in self.per_machine):
            raise ValueError("machine times must be nonnegative")

    @classmethod
    def parallel(cls, machine_times, transfer: float = 0.0, combination: float = 0.0) -> "TimingLedger":
        machine_times = tuple(float(t) for t in machine_times)
        return cls(max(machine_times, default=0.0), transfer, combination, machine_times)

    @property
    def total(self) -> float:
        return self.sampling + self.transfer + self.combination


@dataclass
class Chain:
    """A raw (pre-burn-in) chain and the clock time at which each sample appeared."""

    samples: np.ndarray
    times: np.ndarray
    measured_time: float

    def available(self, t: float) -> int:
        return int(np.searchsorted(self.times, t, side="right"))


def chain_clock(cfg: ExperimentConfig, chain: ChainOutput, n_records: int) -> np.ndarray:
    """Time stamp of every post-adaptation sample on the configured clock."""
    if cfg.clock == "wall":
        return np.asarray(chain.times, dtype=float)
    per_iter = n_records * cfg.seconds_per_record
    steps = chain.adapt_iterations + np.arange(1, len(chain.samples) + 1)
    return steps * per_iter


def _as_chain(cfg, chain: ChainOutput, n_records: int) -> Chain:
    return Chain(chain.samples, chain_clock(cfg, chain, n_records), chain.wall_time)


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _transfer_time(cfg: ExperimentConfig, sets) -> float:
    if cfg.transfer == "model":
        return sum(s.size for s in sets) * BYTES_PER_VALUE / cfg.bytes_per_second
    with tempfile.TemporaryDirectory() as tmp:
        t0 = time.perf_counter()
        for m, s in enumerate(sets, start=1):
            path = Path(tmp) / io.subposterior_filename(m, len(sets))
            io.write_matrix(path, s)
            io.read_matrix(path)
        return time.perf_counter() - t0


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    groundtruth: np.ndarray | None = None
    subposteriors: list = field(default_factory=list)
    chains: list = field(default_factory=list)
    regular: Chain | None = None
    truth: np.ndarray | None = None
    measured: dict = field(default_factory=dict)

    @property
    def x_column(self) -> str:
        return "time_seconds" if self.config.unit == "seconds" else "T"

    def method_rows(self, method: str) -> list:
        return [r for r in self.rows if r["method"] == method]


class _Scorer:
    def __init__(self, cfg: ExperimentConfig, model, reference, test=None):
        self.cfg = cfg
        self.model = model
        self.reference = reference
        self.test = test

    def __call__(self, samples: np.ndarray, seed: int) -> float:
        cfg = self.cfg
        if cfg.symmetrize_labels and self.model.label_blocks:
            samples = symmetrize_labels(samples, self.model.label_blocks, seed)
        if cfg.metric == "accuracy":
            return predictive_accuracy(samples, self.test)
        return l2_distance(samples, self.reference, grid_points=cfg.grid_points, max_points=cfg.max_points)


def predictive_accuracy(samples, records) -> float:
    """Accuracy of the posterior-predictive rule ``P(y=1 | x) > 1/2``.

    ``P(y=1 | x)`` is the average of ``sigmoid(x . theta)`` over samples.
    """
    samples = np.asarray(samples, dtype=float)
    X, y = records[:, :-1], records[:, -1]
    prob = np.zeros(len(y))
    for start in range(0, len(samples), 1024):
        prob += expit(X @ samples[start : start + 1024].T).sum(axis=1)
    prob /= len(samples)
    return float(np.mean((prob > 0.5) == (y > 0.5)))


def default_checkpoints(cfg: ExperimentConfig, chains: list[Chain]) -> tuple:
    if cfg.unit == "samples":
        T = min(len(c.samples) for c in chains)
        return tuple(float(round(T * k / 6)) for k in range(1, 7))
    end = max(c.times[-1] for c in chains)
    return tuple(float(end * k / 6) for k in range(1, 7))


def _truncate(chain: Chain, cfg: ExperimentConfig, checkpoint: float) -> np.ndarray:
    n = chain.available(checkpoint) if cfg.unit == "seconds" else min(int(checkpoint), len(chain.samples))
    return chain.samples[burn_in_count(n) : n]


def error_vs_time(cfg: ExperimentConfig, chains: list[Chain], score, regular: Chain | None = None, checkpoints=None):
    """Score every configured method at every checkpoint.

    For each checkpoint ``t`` every machine's chain is cut to the samples it
    had produced by ``t`` (all machines run at once, so the parallel clock is
    the maximum over machines), the first sixth is dropped, and the sets are
    combined. The x-coordinate adds transfer and combination time to ``t``.
    A checkpoint that leaves some machine with fewer than two post-burn-in
    samples yields an ``unavailable`` row (``l2_error`` NaN).
    """
    checkpoints = tuple(checkpoints or cfg.checkpoints or default_checkpoints(cfg, chains))
    schedule = cfg.bandwidth()
    rows = []
    for k, t in enumerate(checkpoints):
        sets = [_truncate(c, cfg, t) for c in chains]
        ready = all(len(s) >= 2 for s in sets)
        transfer = _transfer_time(cfg, sets) if ready and cfg.unit == "seconds" else 0.0
        for j, method in enumerate(cfg.methods):
            seed = _seed(cfg.seed, k, j)
            if method == REGULAR_CHAIN:
                if regular is None:
                    raise ExperimentError("regularChain requested without a full-data chain")
                samples = _truncate(regular, cfg, t)
                err = score(samples, seed) if len(samples) >= 2 else float("nan")
                rows.append({"method": method, "x": float(t), "l2_error": err, "seed": cfg.seed})
                continue
            if not ready:
                rows.append({"method": method, "x": float(t), "l2_error": float("nan"), "seed": cfg.seed})
                continue
            res = combine(method, sets, T_out=cfg.T_out, schedule=schedule, seed=seed, whiten=cfg.whiten)
            x = float(t)
            if cfg.unit == "seconds":
                comb = res.wall_time if cfg.clock == "wall" else res.op_count * cfg.seconds_per_op
                x += TimingLedger.parallel([t], transfer, comb).total - t
            rows.append({"method": method, "x": x, "l2_error": score(res.samples, seed), "seed": cfg.seed})
    return rows


def test_records(cfg: ExperimentConfig, model, truth) -> np.ndarray:
    """Held-out records from the data-generating parameters (accuracy metric)."""
    test, _ = generate_synthetic(model, cfg.test_size, _seed(cfg.generation_seed, 2), truth)
    return test.records


def groundtruth(cfg: ExperimentConfig, model, ds):
    """Return ``(reference, samples, wall_time)`` for the configured groundtruth.

    ``analytic`` gives the exact conjugate posterior as a :class:`GaussianFit`
    (used directly as the reference density) plus exact draws; ``chain`` runs
    a long full-data chain and uses its post-burn-in samples for both.
    """
    if cfg.groundtruth.get("kind") == "analytic":
        mean, var = model.posterior(ds.records)
        reference = GaussianFit(np.asarray(mean, dtype=float), var * np.eye(model.dim), ds.N)
        rng = np.random.default_rng(_seed(cfg.seed, 3))
        draws = reference.mean + np.sqrt(var) * rng.standard_normal((int(cfg.groundtruth["samples"]), model.dim))
        return reference, draws, None
    gt_cfg = cfg.mh_config(seed=_seed(cfg.seed, 4), iterations=int(cfg.groundtruth["iterations"]))
    gt = run_mh(full_target(model, ds), cfg.init, gt_cfg)
    samples = gt.samples[burn_in_count(len(gt.samples)) :]
    if cfg.symmetrize_labels and model.label_blocks:
        samples = symmetrize_labels(samples, model.label_blocks, _seed(cfg.seed, 5))
    return samples, samples, gt.wall_time


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int | None = None) -> ExperimentResult:
    """Generate, partition, sample, combine and score as configured.

    If ``out_dir`` is given, data, subposterior samples, groundtruth, the error
    table and the resolved config are written there.
    """
    model = cfg.build_model()
    ds, truth = generate_synthetic(model, cfg.N, cfg.generation_seed, cfg.true_params, **cfg.data_options)
    shards = partition(ds, cfg.M, cfg.shard_seed)
    measured = {}

    t0 = time.perf_counter()
    subs = run_subposteriors(model, shards, cfg.mh_config(), base_seed=cfg.seed, init=cfg.init, workers=workers)
    measured["subposterior_sampling_elapsed"] = time.perf_counter() - t0
    chains = [_as_chain(cfg, s.chain, sh.n) for s, sh in zip(subs, shards)]
    measured["machine_wall_times"] = [c.measured_time for c in chains]

    regular = None
    if REGULAR_CHAIN in cfg.methods:
        iters = cfg.regular_iterations or cfg.mh_config().iterations
        reg = run_mh(full_target(model, ds), cfg.init, cfg.mh_config(seed=_seed(cfg.seed, 1), iterations=iters))
        regular = _as_chain(cfg, reg, ds.N)
        measured["regular_chain_wall_time"] = reg.wall_time

    test = reference = gt_samples = None
    if cfg.metric == "accuracy":
        test = test_records(cfg, model, truth)
    else:
        reference, gt_samples, gt_wall = groundtruth(cfg, model, ds)
        if gt_wall is not None:
            measured["groundtruth_wall_time"] = gt_wall

    score = _Scorer(cfg, model, reference, test)
    rows = error_vs_time(cfg, chains, score, regular)
    result = ExperimentResult(cfg, rows, gt_samples, subs, chains, regular, truth, measured)
    if out_dir is not None:
        write_experiment(result, out_dir, model, ds)
    return result


def write_experiment(result: ExperimentResult, out_dir, model, dataset) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    (out / "config.yaml").write_text(yaml.safe_dump(_plain(cfg.to_dict()), sort_keys=True))
    io.write_dataset(out / "data.csv", dataset, model)
    clock_times = {s.m: float(c.times[-1]) for s, c in zip(result.subposteriors, result.chains)}
    io.write_subposteriors(out / "samples", result.subposteriors, clock_times=clock_times)
    if result.groundtruth is not None:
        io.write_samples(out / "groundtruth.csv", result.groundtruth, {"model_id": model.kind, "kind": cfg.groundtruth["kind"]})
    name = "accuracy_vs_time.csv" if cfg.metric == "accuracy" else "error_vs_time.csv"
    value = "accuracy" if cfg.metric == "accuracy" else "l2_error"
    io.write_error_table(out / name, result.rows, x_column=result.x_column, value_column=value)
    # Measured times differ between runs; they are kept apart from the tables.
    (out / "timing_measured.json").write_text(json.dumps(result.measured, indent=2) + "\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
