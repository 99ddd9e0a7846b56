"""Held-out metrics, kappa sweeps and report export."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, GroupSequence, check_dataset
from .exceptions import DataError, DimensionError, MMRNNError, NumericalError
from .model import ModelState, forward_batch, make_batch

BUCKET_HEADER = ["delta_t", "count", "mean_error", "std_error"]
SWEEP_HEADER = ["t0", "kappa", "seed", "mean_error"]
FIRST_BUCKET = "first"


@dataclass
class LagBucket:
    delta_t: int | str
    count: int
    mean_error: float
    std_error: float


@dataclass
class EvalReport:
    mode: str
    group_ids: list
    errors: np.ndarray
    deltas: np.ndarray
    buckets: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.errors)

    @property
    def overall_mean(self) -> float:
        return float(np.mean(self.errors)) if self.n else float("nan")

    @property
    def overall_std(self) -> float:
        return float(np.std(self.errors)) if self.n else float("nan")

    def bucket(self, delta_t) -> LagBucket | None:
        for b in self.buckets:
            if b.delta_t == delta_t:
                return b
        return None

    def mean_over(self, lo: float, hi: float) -> float:
        """Mean error over held-out orders whose gap lies in [lo, hi]."""
        sel = (self.deltas >= lo) & (self.deltas <= hi)
        return float(np.mean(self.errors[sel])) if np.any(sel) else float("nan")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n": self.n,
            "overall_mean": self.overall_mean,
            "overall_std": self.overall_std,
            "buckets": [asdict(b) for b in self.buckets],
            "per_group": [
                {"group_id": g, "delta_t": _gap_key(d), "error": float(e)}
                for g, d, e in zip(self.group_ids, self.deltas, self.errors)
            ],
        }


def _gap_key(d):
    return FIRST_BUCKET if not np.isfinite(d) else int(round(float(d)))


def lag_buckets(errors, deltas) -> list:
    groups: dict = {}
    for e, d in zip(errors, deltas):
        groups.setdefault(_gap_key(d), []).append(float(e))
    keys = sorted(k for k in groups if k != FIRST_BUCKET)
    if FIRST_BUCKET in groups:
        keys.append(FIRST_BUCKET)
    return [
        LagBucket(k, len(groups[k]), float(np.mean(groups[k])), float(np.std(groups[k])))
        for k in keys
    ]


def prediction_errors(mode: str, yhat: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Squared error per held-out order.

    Basic mode compares normalised histograms; topic mode compares raw
    counts and divides by the vocabulary size.
    """
    if mode == "basic":
        n = targets.sum(axis=1, keepdims=True)
        ybar = targets / np.where(n > 0, n, 1.0)
        return np.sum((ybar - yhat) ** 2, axis=1)
    return np.sum((targets - yhat) ** 2, axis=1) / targets.shape[1]


def predict_holdout(state: ModelState, train: Dataset, holdout) -> np.ndarray:
    """Prediction for each held-out order, made by extending the group's
    training sequence by one step with the held-out gap."""
    if not holdout:
        return np.zeros((0, state.config.V))
    check_dataset(train, V=state.config.V)
    seqs = []
    for h in holdout:
        seq = train.group(h.group_id)
        if h.counts.shape != (seq.V,):
            raise DimensionError(f"held-out order for {h.group_id} has shape {h.counts.shape}")
        seqs.append(
            GroupSequence(
                seq.group_id,
                np.append(seq.deltas, h.delta_t),
                np.vstack([seq.counts, h.counts[None, :]]),
            )
        )
    batch = make_batch(seqs, state.config.decay)
    fwd = forward_batch(state, batch)
    last = batch.lengths - 1
    return fwd.yhat[np.arange(batch.N), last]


def evaluate_holdout(
    state: ModelState, train: Dataset, holdout, impute_policy: str | None = None, impute_mean=None
) -> EvalReport:
    """Score held-out last orders; never mutates ``state``.

    With ``impute_policy`` the gap before each held-out order is first
    filled in on the daily grid, as the imputation baselines require
    (``impute_mean`` is the training mean for the ``mean`` policy). Lag
    buckets always use the original gap.
    """
    orig_deltas = np.array([h.delta_t for h in holdout], dtype=float)
    if impute_policy is not None:
        from .baselines import impute_holdout

        train, holdout = impute_holdout(train, holdout, impute_policy, impute_mean)
    yhat = predict_holdout(state, train, holdout)
    targets = np.array([h.counts for h in holdout]).reshape(len(holdout), -1)
    errors = prediction_errors(state.config.mode, yhat, targets) if holdout else np.zeros(0)
    return EvalReport(
        state.config.mode,
        [h.group_id for h in holdout],
        errors,
        orig_deltas,
        lag_buckets(errors, orig_deltas),
    )


# ------------------------------------------------------------------ sweeps


@dataclass
class SweepCell:
    t0: float
    kappa: float
    seed: int
    mean_error: float
    report: EvalReport | None = None
    trace: list = field(default_factory=list)
    error: str | None = None


@dataclass
class SweepResult:
    cells: list

    def summary(self) -> dict:
        """(t0, kappa) -> median / quartiles of the per-seed mean errors."""
        out = {}
        keys = []
        for c in self.cells:
            if (c.t0, c.kappa) not in keys:
                keys.append((c.t0, c.kappa))
        for key in keys:
            vals = np.array([c.mean_error for c in self.cells if (c.t0, c.kappa) == key and c.error is None])
            if vals.size:
                q1, med, q3 = np.percentile(vals, [25, 50, 75])
            else:
                q1 = med = q3 = float("nan")
            out[key] = {"median": float(med), "q1": float(q1), "q3": float(q3), "n": int(vals.size)}
        return out

    def median(self, t0, kappa) -> float:
        return self.summary()[(t0, kappa)]["median"]

    def cells_for(self, t0, kappa) -> list:
        return [c for c in self.cells if c.t0 == t0 and c.kappa == kappa]

    def to_dict(self) -> dict:
        return {
            "cells": [
                {"t0": c.t0, "kappa": c.kappa, "seed": c.seed, "mean_error": c.mean_error, "error": c.error}
                for c in self.cells
            ],
            "summary": [
                {"t0": k[0], "kappa": k[1], **v} for k, v in self.summary().items()
            ],
        }


def _sweep_cell(args):
    from .estimator import MMRNN

    train, holdout, params, t0, kappa, seed = args
    est = MMRNN(**{**params, "t0": t0, "kappa": kappa, "random_state": seed})
    try:
        est.fit(train)
        report = est.evaluate(holdout)
        return SweepCell(t0, kappa, seed, report.overall_mean, report, list(est.trace_.objective))
    except NumericalError as exc:
        return SweepCell(t0, kappa, seed, float("nan"), None, [], str(exc))


def kappa_sweep(train: Dataset, holdout, grid, seeds, estimator_params: dict | None = None, n_jobs: int = 1) -> SweepResult:
    """Train and evaluate one model per (t0, kappa, seed).

    ``grid`` is an iterable of ``(t0, kappa)`` pairs; ``estimator_params``
    are passed to :class:`~mmrnn.estimator.MMRNN`. A diverging cell is
    recorded with its error message and does not stop the sweep.
    """
    grid = [(float(t0), float(k)) for t0, k in grid]
    if not grid:
        raise MMRNNError("empty sweep grid")
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    params = dict(estimator_params or {})
    jobs = [(train, holdout, params, t0, k, s) for t0, k in grid for s in seeds]
    if n_jobs == 1:
        cells = [_sweep_cell(j) for j in jobs]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            cells = list(pool.map(_sweep_cell, jobs))
    return SweepResult(cells)


# ------------------------------------------------------------------ export


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _to_jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        obj = obj.to_dict() if hasattr(obj, "to_dict") else asdict(obj)
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _encode(o, indent: str) -> str:
    inner = indent + " "
    if isinstance(o, dict):
        if not o:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {_encode(v, inner)}" for k, v in o.items()]
        return "{\n" + ",\n".join(items) + "\n" + indent + "}"
    if isinstance(o, list):
        if not o:
            return "[]"
        return "[\n" + ",\n".join(inner + _encode(v, inner) for v in o) + "\n" + indent + "]"
    if isinstance(o, bool) or o is None:
        return json.dumps(o)
    if isinstance(o, float):
        return _fmt(o) if math.isfinite(o) else "null"
    if isinstance(o, int):
        return str(o)
    return json.dumps(str(o) if not isinstance(o, str) else o)


def dumps(obj) -> str:
    """JSON with floats written to 17 significant digits; NaN becomes null."""
    return _encode(_to_jsonable(obj), "") + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def report_csv(obj) -> str:
    if isinstance(obj, EvalReport):
        return _csv_text(BUCKET_HEADER, [[b.delta_t, b.count, b.mean_error, b.std_error] for b in obj.buckets])
    if isinstance(obj, SweepResult):
        return _csv_text(SWEEP_HEADER, [[c.t0, c.kappa, c.seed, c.mean_error] for c in obj.cells])
    raise TypeError(f"cannot write {type(obj).__name__} as CSV")


def emit_report(obj, path, fmt: str = "json") -> Path:
    """Write an EvalReport, SweepResult or run dict as JSON or CSV."""
    path = Path(path)
    if fmt == "json":
        text = dumps(obj)
    elif fmt == "csv":
        text = report_csv(obj)
    else:
        raise ValueError(f"format must be json or csv, got {fmt!r}")
    try:
        path.write_text(text, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    return path


def read_bucket_csv(path) -> list:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        out = []
        for r in reader:
            d = r["delta_t"]
            out.append(
                LagBucket(
                    d if d == FIRST_BUCKET else int(d),
                    int(r["count"]),
                    float(r["mean_error"]),
                    float(r["std_error"]),
                )
            )
    return out
