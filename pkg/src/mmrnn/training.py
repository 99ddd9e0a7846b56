"""Alternating MAP optimisation: gradient steps on each group bias, gradient
steps on the shared recurrent parameters, then a multiplicative update of
the topic matrix."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, GroupSequence, check_dataset
from .exceptions import ConfigurationError, DataError, NumericalError, StateError
from .model import (
    THETA_NAMES,
    ModelState,
    dv_from_loss,
    backward,
    forward_batch,
    loss_and_grads,
    make_batch,
    objective,
)
from .numerics import sgd_step

log = logging.getLogger(__name__)

NMF_FLOOR = 1e-10


@dataclass
class TrainConfig:
    lr: float = 0.01
    epochs: int = 20
    seed: int = 0
    update_B: bool = True
    nmf_inner_iters: int = 1
    shuffle: bool = False
    batch_size: int | None = None  # groups per theta step; None = full batch

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigurationError(f"lr must be non-negative, got {self.lr}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.nmf_inner_iters < 0:
            raise ConfigurationError("nmf_inner_iters must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")


@dataclass
class TrainTrace:
    objective: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)

    def append(self, value: float, seconds: float) -> None:
        if not np.isfinite(value):
            raise NumericalError(f"non-finite objective at epoch {len(self.objective) + 1}")
        self.objective.append(float(value))
        self.wall_time.append(float(seconds))


def nmf_update_B(B: np.ndarray, Sigma: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """One Frobenius multiplicative step ``B <- B * (Y S^T) / (B S S^T)``.

    ``B`` is V x K, ``Sigma`` K x T, ``Y`` V x T. The denominator is floored
    at 1e-10. ||Y - B Sigma||_F does not increase.
    """
    B = np.asarray(B, dtype=np.float64)
    if np.any(B < 0):
        raise StateError("topic matrix has negative entries")
    num = Y @ Sigma.T
    den = B @ (Sigma @ Sigma.T)
    return B * num / np.maximum(den, NMF_FLOOR)


def nmf_design(fwd) -> tuple[np.ndarray, np.ndarray]:
    """Columns for the B update from a forward pass over real steps.

    Returns ``(S, Y)`` with ``S[:, j] = n_j sigma_j`` and ``Y[:, j] = y_j``,
    so that ||Y - B S||_F^2 is exactly the data term (times 2c).
    """
    m = fwd.batch.mask
    sigma = fwd.sigma[m]  # (M, K)
    n = fwd.batch.totals[m]
    Y = fwd.batch.counts[m]
    return (sigma * n[:, None]).T, Y.T


def phi_gradient(state: ModelState, seq: GroupSequence) -> np.ndarray:
    """d objective / d phi_d for one group: sum_t (1-rho_t) J^T dL/dsigma_t + phi_d / b."""
    batch = make_batch([seq], state.config.decay)
    fwd = forward_batch(state, batch)
    _, dphi = backward(state, fwd, dv_from_loss(state, fwd))
    return dphi[0] + state.phi[state.row(seq.group_id)] / state.config.b


def _batches(ids, batch_size, rng, shuffle):
    order = np.arange(len(ids))
    if shuffle:
        order = rng.permutation(order)
    size = len(ids) if batch_size is None else batch_size
    for start in range(0, len(order), size):
        yield order[start:start + size]


def train(config: TrainConfig, state: ModelState, dataset: Dataset, callback=None):
    """Optimise a copy of ``state`` on ``dataset``; returns ``(state, trace)``.

    Each epoch sweeps the groups in batches: one backward pass per batch
    yields both the group-bias gradients (one step per group) and the shared
    gradient (one theta step). In topic mode the topic matrix then gets
    ``nmf_inner_iters`` multiplicative updates using sigma from a fresh
    forward pass. The objective after the epoch is recorded.
    """
    check_dataset(dataset, V=state.config.V)
    missing = [g for g in dataset.group_ids if g not in state.group_index]
    if missing:
        raise DataError(f"model has no bias for groups {missing[:5]}")
    state = state.copy()
    cfg = state.config
    rng = np.random.default_rng(config.seed)
    seqs = dataset.sequences
    D = len(seqs)
    full = make_batch(seqs, cfg.decay)
    fixed = None
    if config.batch_size is None:
        fixed = [(D, full)]
    elif not config.shuffle:
        fixed = [(len(idx), make_batch([seqs[i] for i in idx], cfg.decay))
                 for idx in _batches(seqs, config.batch_size, rng, False)]
    trace = TrainTrace()
    params = state.params
    for epoch in range(config.epochs):
        t_start = time.perf_counter()
        plan = fixed if fixed is not None else (
            (len(idx), make_batch([seqs[i] for i in idx], cfg.decay))
            for idx in _batches(seqs, config.batch_size, rng, True)
        )
        for size, batch in plan:
            _, tgrads, phi_grad, _ = loss_and_grads(state, batch, theta_reg_weight=size / D)
            if config.lr > 0:
                params.zero_grads()
                params.accumulate("phi", phi_grad)
                sgd_step(params, config.lr, names=("phi",))
                for k in THETA_NAMES:
                    params.accumulate(k, tgrads[k])
                sgd_step(params, config.lr, names=THETA_NAMES)
        fwd = forward_batch(state, full)
        if cfg.mode == "topic" and config.update_B:
            S, Y = nmf_design(fwd)
            for _ in range(config.nmf_inner_iters):
                state.B = nmf_update_B(state.B, S, Y)
        value = objective(state, full, fwd if cfg.mode != "topic" else None)
        if not np.isfinite(value):
            bad = _worst_group(state, seqs)
            raise NumericalError(f"objective diverged at epoch {epoch + 1} (group {bad})")
        trace.append(value, time.perf_counter() - t_start)
        log.info("epoch %d objective %.6g", epoch + 1, value)
        if callback is not None:
            callback(epoch + 1, value)
    return state, trace


def _worst_group(state: ModelState, seqs) -> str:
    for s in seqs:
        if not np.isfinite(objective(state, make_batch([s], state.config.decay))):
            return s.group_id
    return "<regulariser>"
