"""Plain-text persistence: CSV-line sample and dataset files with JSON sidecars.

Every numeric file holds one row per line with comma-separated values written
at full ``repr`` precision, so a write/read round trip is exact. Metadata lives
next to the data file as ``<stem>.json``.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable

import numpy as np

from .model import Dataset, model_from_dict

UNAVAILABLE = "unavailable"


class PersistenceError(OSError):
    """A data or metadata file is missing or malformed."""


def subposterior_filename(m: int, M: int) -> str:
    return f"subpost_{m}_of_{M}.csv"


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_metadata(path, meta: dict) -> Path:
    side = sidecar_path(path)
    side.write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n")
    return side


def read_metadata(path) -> dict:
    side = sidecar_path(path)
    if not side.exists():
        raise PersistenceError(f"missing metadata file {side}")
    return json.loads(side.read_text())


def write_matrix(path, rows, meta: dict | None = None) -> Path:
    """Write a 2-d array as CSV lines (``repr`` precision) plus optional sidecar."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[:, None]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    if meta is not None:
        write_metadata(path, meta)
    return path


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise PersistenceError(f"missing data file {path}")
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError as exc:
                raise PersistenceError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise PersistenceError(f"{path} holds no rows")
    if len({len(r) for r in rows}) != 1:
        raise PersistenceError(f"{path} has rows of differing width")
    return np.array(rows)


# -- datasets ---------------------------------------------------------------


def write_dataset(path, dataset: Dataset, model) -> Path:
    meta = {
        "model_id": dataset.model_id,
        "dataset_id": dataset.dataset_id,
        "N": dataset.N,
        "d": model.dim,
        "seed": dataset.seed,
        "true_params": dataset.truth,
        "model": model.to_dict(),
    }
    return write_matrix(path, dataset.records, meta)


def read_dataset(path):
    """Return ``(dataset, model)`` from a dataset file and its sidecar."""
    meta = read_metadata(path)
    records = read_matrix(path)
    truth = meta.get("true_params")
    ds = Dataset(
        records=records,
        model_id=meta["model_id"],
        dataset_id=meta.get("dataset_id", "dataset"),
        seed=meta.get("seed"),
        truth=None if truth is None else np.asarray(truth, dtype=float),
    )
    return ds, model_from_dict(meta["model"])


# -- sample sets ------------------------------------------------------------


def write_samples(path, samples, meta: dict) -> Path:
    return write_matrix(path, samples, meta)


def read_samples(path):
    """Return ``(samples, meta)``."""
    return read_matrix(path), read_metadata(path)


def write_subposteriors(directory, subs, clock_times: dict | None = None) -> list[Path]:
    """Write every machine's samples as ``subpost_<m>_of_<M>.csv``.

    ``clock_times`` maps machine index to the time recorded as ``wall_time``
    in the sidecar (default: the measured chain time).
    """
    directory = Path(directory)
    paths = []
    for s in subs:
        meta = {
            "m": s.m,
            "M": s.M,
            "seed": s.seed,
            "model_id": s.model_id,
            "accept_rate": s.accept_rate,
            "wall_time": s.wall_time if clock_times is None else clock_times[s.m],
            "T": int(s.samples.shape[0]),
            **s.meta,
        }
        paths.append(write_samples(directory / subposterior_filename(s.m, s.M), s.samples, meta))
    return paths


def read_subposteriors(directory, M: int) -> list[np.ndarray]:
    """Load all ``M`` subposterior files; any missing machine is an error."""
    directory = Path(directory)
    missing = [m for m in range(1, M + 1) if not (directory / subposterior_filename(m, M)).exists()]
    if missing:
        raise PersistenceError(f"missing subposterior files for machines {missing} of {M} in {directory}")
    sets = []
    for m in range(1, M + 1):
        samples, meta = read_samples(directory / subposterior_filename(m, M))
        if meta.get("m") != m or meta.get("M") != M:
            raise PersistenceError(f"metadata of {subposterior_filename(m, M)} names machine {meta.get('m')} of {meta.get('M')}")
        sets.append(samples)
    return sets


# -- error tables -------------------------------------------------------------


def write_error_table(
    path, rows: Iterable[dict], x_column: str = "time_seconds", value_column: str = "l2_error"
) -> Path:
    """Write rows with keys ``method``, ``x``, ``l2_error`` and ``seed``.

    A value of ``None`` or NaN is written as ``unavailable``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["method", x_column, value_column, "seed"])
        for r in rows:
            err = r["l2_error"]
            err = UNAVAILABLE if err is None or not math.isfinite(err) else repr(float(err))
            out.writerow([r["method"], repr(float(r["x"])), err, int(r["seed"])])
    return path


def read_error_table(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise PersistenceError(f"missing error table {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != 4 or header[0] != "method" or header[3] != "seed":
            raise PersistenceError(f"{path} is not an error table (header {header})")
        rows = []
        for rec in reader:
            err = float("nan") if rec[2] == UNAVAILABLE else float(rec[2])
            rows.append({"method": rec[0], "x": float(rec[1]), "l2_error": err, "seed": int(rec[3])})
    return rows


def error_table_x_column(path) -> str:
    with Path(path).open(newline="") as fh:
        return next(csv.reader(fh))[1]
