"""Comparison systems: daily-grid imputation and decay presets.

Imputed corpora are meant to be fed to the vanilla (kappa = 0) preset.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .cells import CellState, get_cell
from .data import Dataset, GroupSequence, HoldoutOrder
from .decay import DecaySpec, ZeroDecay
from .exceptions import ConfigurationError, DataError
from .model import ModelConfig, SequenceBatch
from .numerics import softmax

IMPUTE_POLICIES = ("mean", "forward", "zero")
PRESETS = ("mmrnn", "vanilla_lstm", "exchangeable")


def _check_policy(policy: str) -> str:
    if policy not in IMPUTE_POLICIES:
        raise ConfigurationError(f"impute policy must be one of {IMPUTE_POLICIES}, got {policy!r}")
    return policy


def _fill(policy, prev, mean, n, V):
    if policy == "zero":
        return np.zeros((n, V))
    if policy == "forward":
        return np.repeat(prev[None, :], n, axis=0)
    return np.repeat(mean[None, :], n, axis=0)


def impute_sequence(seq: GroupSequence, policy: str, mean: np.ndarray | None = None) -> GroupSequence:
    _check_policy(policy)
    if policy == "mean" and mean is None:
        raise DataError("mean imputation needs the training mean vector")
    rows = [seq.counts[0][None, :]]
    for t in range(1, seq.T):
        gap = seq.deltas[t]
        if gap > 30:
            raise DataError(f"group {seq.group_id}: gap {gap} exceeds 30 days")
        n_fill = max(int(round(gap)) - 1, 0)
        if n_fill:
            rows.append(_fill(policy, seq.counts[t - 1], mean, n_fill, seq.V))
        rows.append(seq.counts[t][None, :])
    counts = np.concatenate(rows, axis=0)
    deltas = np.ones(counts.shape[0])
    deltas[0] = np.nan
    return GroupSequence(seq.group_id, deltas, counts)


def impute(ds: Dataset, policy: str, mean: np.ndarray | None = None) -> Dataset:
    """Expand every sequence to a daily grid.

    A gap of ``dt`` days gets ``dt - 1`` inserted orders: the training-data
    mean count vector, a copy of the previous real order, or zeros. Every
    step of the result has a one-day gap. ``mean`` defaults to the mean of
    ``ds`` itself.
    """
    _check_policy(policy)
    if policy == "mean" and mean is None:
        mean = ds.mean_count_vector()
    seqs = [impute_sequence(s, policy, mean) for s in ds.sequences]
    return Dataset(list(ds.items), seqs, aisles=ds.aisles, regridded=True)


def impute_holdout(train: Dataset, holdout, policy: str, mean=None):
    """Regrid the held-out step: append the filler orders for its gap to each
    training sequence and give the held-out order a one-day gap.

    Returns ``(extended_train, holdout_with_unit_gaps)``.
    """
    _check_policy(policy)
    if policy == "mean" and mean is None:
        mean = train.mean_count_vector()
    seqs, new_holdout = [], []
    for h in holdout:
        seq = train.group(h.group_id)
        n_fill = max(int(round(h.delta_t)) - 1, 0)
        if n_fill:
            fill = _fill(policy, seq.counts[-1], mean, n_fill, seq.V)
            seq = GroupSequence(
                seq.group_id,
                np.concatenate([seq.deltas, np.ones(n_fill)]),
                np.concatenate([seq.counts, fill]),
            )
        seqs.append(seq)
        new_holdout.append(HoldoutOrder(h.group_id, h.counts, 1.0))
    kept = {h.group_id for h in holdout}
    seqs += [s for s in train.sequences if s.group_id not in kept]
    return Dataset(list(train.items), seqs, aisles=train.aisles, regridded=True), new_holdout


def preset(kind: str, base: ModelConfig) -> ModelConfig:
    """``vanilla_lstm`` sets kappa = 0, ``exchangeable`` forces rho = 0,
    ``mmrnn`` returns the configuration unchanged."""
    if kind == "mmrnn":
        return base
    if kind == "vanilla_lstm":
        t0 = base.decay.t0 if isinstance(base.decay, DecaySpec) else 1.0
        return replace(base, decay=DecaySpec(t0, 0.0))
    if kind == "exchangeable":
        return replace(base, decay=ZeroDecay())
    raise ConfigurationError(f"unknown preset {kind!r}; choose from {PRESETS}")


def lstm_pipeline_predict(state, batch: SequenceBatch) -> np.ndarray:
    """Plain recurrent predictor softmax(P h_t), no group bias and no decay.

    Shares nothing with the MM-RNN forward pass except the cell step, so it
    serves as the reference for the kappa = 0 reduction. Returns sigma with
    shape (N, T, K).
    """
    cfg = state.config
    _, step, _ = get_cell(cfg.cell)
    p = state.cell_params()
    P = state.params["P"]
    x = batch.inputs()
    s = CellState.zeros(cfg.H, batch.N)
    hs = np.empty((batch.N, batch.T, cfg.H))
    for t in range(batch.T):
        s, _ = step(p, x[:, t], s)
        hs[:, t] = s.h
    return softmax(hs @ P.T)
