"""Command-line entry point ``epmcmc``.

Verbs operate on one output directory (``--out``, default from the config):

    generate    write data.csv
    partition   split data.csv into shards/shard_<m>_of_<M>.csv
    sample      run one chain per shard, writing samples/subpost_<m>_of_<M>.csv
    combine     combine samples/ into combined/<method>.csv (reads sample files only)
    evaluate    score combined/<method>.csv against the groundtruth -> evaluation.csv
    experiment  full error-versus-time pipeline -> error_vs_time.csv
    report      per-method, per-checkpoint summary of an error table

The worker limit for parallel chains comes from ``EPMCMC_WORKERS``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .. import io
from ..combine import METHODS, combine, symmetrize_labels
from ..estimate import l2_distance
from ..model import DataShard, generate_synthetic, partition
from ..sampler import run_subposteriors
from .config import ConfigError, ExperimentConfig, load_config
from .experiment import groundtruth, predictive_accuracy, run_experiment, test_records

VERBS = ("generate", "partition", "sample", "combine", "evaluate", "experiment", "report")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment configuration")
    common.add_argument("--seed", type=int, help="override the base seed")
    common.add_argument("--method", action="append", help="combination method (repeatable)")
    common.add_argument("--M", type=int, help="override the number of machines")
    common.add_argument("--out", help="output directory")
    common.add_argument("--checkpoints", help="comma-separated, strictly increasing checkpoints")
    p = argparse.ArgumentParser(prog="epmcmc", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        sp = sub.add_parser(verb, parents=[common])
        if verb in ("combine", "evaluate"):
            sp.add_argument("--samples", help="directory holding subpost_<m>_of_<M>.csv files")
        if verb == "evaluate":
            sp.add_argument("--reference", help="groundtruth sample file (default: analytic or a new chain)")
        if verb == "report":
            sp.add_argument("--table", help="error table (default: <out>/error_vs_time.csv)")
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    kw = {"seed": args.seed, "M": args.M, "output": args.out}
    if args.method:
        kw["methods"] = tuple(args.method)
    if args.checkpoints:
        try:
            kw["checkpoints"] = tuple(float(c) for c in args.checkpoints.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad --checkpoints value {args.checkpoints!r}") from exc
    return cfg.with_overrides(**kw)


def _shard_path(out: Path, m: int, M: int) -> Path:
    return out / "shards" / f"shard_{m}_of_{M}.csv"


def cmd_generate(cfg: ExperimentConfig, out: Path, args) -> None:
    model = cfg.build_model()
    ds, _ = generate_synthetic(model, cfg.N, cfg.generation_seed, cfg.true_params, **cfg.data_options)
    io.write_dataset(out / "data.csv", ds, model)
    print(f"wrote {ds.N} records to {out / 'data.csv'}")


def cmd_partition(cfg: ExperimentConfig, out: Path, args) -> None:
    ds, _ = io.read_dataset(out / "data.csv")
    for shard in partition(ds, cfg.M, cfg.shard_seed):
        meta = {"parent_id": shard.parent_id, "m": shard.index, "M": shard.M, "rows": shard.rows}
        io.write_matrix(_shard_path(out, shard.index, shard.M), shard.records, meta)
    print(f"wrote {cfg.M} shards to {out / 'shards'}")


def _read_shards(out: Path, M: int) -> list[DataShard]:
    shards = []
    for m in range(1, M + 1):
        path = _shard_path(out, m, M)
        meta = io.read_metadata(path)
        shards.append(DataShard(meta["parent_id"], m, M, io.read_matrix(path), np.asarray(meta["rows"])))
    return shards


def cmd_sample(cfg: ExperimentConfig, out: Path, args) -> None:
    model = cfg.build_model()
    shards = _read_shards(out, cfg.M)
    subs = run_subposteriors(model, shards, cfg.mh_config(), base_seed=cfg.seed, init=cfg.init)
    io.write_subposteriors(out / "samples", subs)
    for s in subs:
        print(f"machine {s.m}/{s.M}: {len(s.samples)} samples, accept rate {s.accept_rate:.3f}")


def _combined_methods(cfg: ExperimentConfig) -> list[str]:
    return [m for m in cfg.methods if m in METHODS]


def cmd_combine(cfg: ExperimentConfig, out: Path, args) -> None:
    sets = io.read_subposteriors(Path(args.samples) if args.samples else out / "samples", cfg.M)
    schedule = cfg.bandwidth()
    for method in _combined_methods(cfg):
        res = combine(method, sets, T_out=cfg.T_out, schedule=schedule, seed=cfg.seed, whiten=cfg.whiten)
        meta = {
            "method": method,
            "M": cfg.M,
            "seed": cfg.seed,
            "schedule": schedule.describe(),
            "whiten": cfg.whiten,
            "accept_rate": res.accept_rate,
            "n_weight_evals": res.n_weight_evals,
            "op_count": res.op_count,
        }
        io.write_samples(out / "combined" / f"{method}.csv", res.samples, meta)
        print(f"{method}: {len(res.samples)} samples")


def _reference(cfg: ExperimentConfig, out: Path, args):
    if args.reference:
        return io.read_matrix(args.reference)
    if (out / "groundtruth.csv").exists():
        return io.read_matrix(out / "groundtruth.csv")
    ds, model = io.read_dataset(out / "data.csv")
    reference, samples, _ = groundtruth(cfg, model, ds)
    io.write_samples(out / "groundtruth.csv", samples, {"model_id": model.kind, "kind": cfg.groundtruth["kind"]})
    return reference


def cmd_evaluate(cfg: ExperimentConfig, out: Path, args) -> None:
    model = cfg.build_model()
    rows = []
    if cfg.metric == "accuracy":
        ds, _ = io.read_dataset(out / "data.csv")
        test = test_records(cfg, model, ds.truth)
    else:
        ref = _reference(cfg, out, args)
    for method in _combined_methods(cfg):
        samples = io.read_matrix(out / "combined" / f"{method}.csv")
        if cfg.symmetrize_labels and model.label_blocks:
            samples = symmetrize_labels(samples, model.label_blocks, cfg.seed)
        if cfg.metric == "accuracy":
            value = predictive_accuracy(samples, test)
        else:
            value = l2_distance(samples, ref, grid_points=cfg.grid_points, max_points=cfg.max_points)
        rows.append({"method": method, "x": len(samples), "l2_error": value, "seed": cfg.seed})
        print(f"{method}: {cfg.metric} {value:.6g}")
    value_column = "accuracy" if cfg.metric == "accuracy" else "l2_error"
    io.write_error_table(out / "evaluation.csv", rows, x_column="T", value_column=value_column)


def cmd_experiment(cfg: ExperimentConfig, out: Path, args) -> None:
    result = run_experiment(cfg, out_dir=out)
    for r in result.rows:
        print(f"{r['method']:24s} {result.x_column}={r['x']:.6g} {cfg.metric}={r['l2_error']:.6g}")


def summarize(rows: list[dict]) -> list[dict]:
    """One summary row per (method, checkpoint) with the rank among methods.

    Rows of a method are matched to checkpoints by their order in the table.
    Unavailable values get no rank.
    """
    methods = list(dict.fromkeys(r["method"] for r in rows))
    per_method = {m: [r for r in rows if r["method"] == m] for m in methods}
    n_checkpoints = max(len(v) for v in per_method.values())
    out = []
    for k in range(n_checkpoints):
        here = [(m, per_method[m][k]) for m in methods if k < len(per_method[m])]
        finite = sorted((r["l2_error"], m) for m, r in here if np.isfinite(r["l2_error"]))
        rank = {m: i + 1 for i, (_, m) in enumerate(finite)}
        for m, r in here:
            out.append({"method": m, "checkpoint": k + 1, "x": r["x"], "value": r["l2_error"], "rank": rank.get(m)})
    return out


def cmd_report(cfg: ExperimentConfig, out: Path, args) -> None:
    table = Path(args.table) if args.table else out / "error_vs_time.csv"
    rows = io.read_error_table(table)
    xcol = io.error_table_x_column(table)
    print(f"{'method':24s} {'checkpoint':>10s} {xcol:>14s} {'value':>14s} {'rank':>5s}")
    for s in summarize(rows):
        value = "unavailable" if not np.isfinite(s["value"]) else f"{s['value']:.6g}"
        rank = "-" if s["rank"] is None else str(s["rank"])
        print(f"{s['method']:24s} {s['checkpoint']:>10d} {s['x']:>14.6g} {value:>14s} {rank:>5s}")


COMMANDS = {
    "generate": cmd_generate,
    "partition": cmd_partition,
    "sample": cmd_sample,
    "combine": cmd_combine,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"epmcmc: invalid configuration: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.output)
    try:
        COMMANDS[args.verb](cfg, out, args)
    except Exception as exc:  # reported, and partial outputs are labeled
        if out.exists() and args.verb != "report":
            status = {"verb": args.verb, "status": "incomplete", "error": f"{type(exc).__name__}: {exc}"}
            (out / "STATUS.json").write_text(json.dumps(status, indent=2) + "\n")
        print(f"epmcmc {args.verb}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if args.verb != "report":
        out.mkdir(parents=True, exist_ok=True)
        (out / "STATUS.json").write_text(json.dumps({"verb": args.verb, "status": "complete"}, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
