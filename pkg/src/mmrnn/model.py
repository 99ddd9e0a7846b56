"""MM-RNN forward pass, objective and hand-written gradients.

At step ``t`` of group ``d`` the model forms::

    h_t     = cell(x_t, h_{t-1})            x_t = normalised y_{t-1}, x_1 = 0
    v_t     = rho_t * P h_t + (1 - rho_t) * phi_d
    sigma_t = softmax(v_t)
    yhat_t  = sigma_t                       (basic mode)
    yhat_t  = n_t * B sigma_t               (topic mode, n_t = |y_t|)

and the objective is::

    |theta|^2 / 2a + sum_d |phi_d|^2 / 2b + sum_{d,t} |y_t - yhat_t|^2 / 2c

All groups in a batch are padded to the longest sequence and run together;
padded steps are masked out of the loss so they receive no gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cells import CellState, LstmParams, get_cell
from .data import Dataset, GroupSequence
from .decay import DecaySchedule, DecaySpec
from .exceptions import ConfigurationError, DataError, DimensionError, NumericalError
from .numerics import DTYPE, ParamStore, softmax, softmax_backward

THETA_NAMES = ("W", "U", "b", "P")
LOG_FLOOR = 1e-12


@dataclass
class ModelConfig:
    mode: str = "basic"
    H: int = 10
    K: int = 134
    V: int | None = None
    decay: DecaySchedule = field(default_factory=lambda: DecaySpec(1.0, 0.1))
    a: float = 100.0
    b: float = 100.0
    c: float = 1.0
    loss: str = "l2"
    cell: str = "lstm"

    def __post_init__(self):
        if self.mode not in ("basic", "topic"):
            raise ConfigurationError(f"mode must be 'basic' or 'topic', got {self.mode!r}")
        if self.loss not in ("l2", "xent"):
            raise ConfigurationError(f"loss must be 'l2' or 'xent', got {self.loss!r}")
        if self.H < 1 or self.K < 1:
            raise ConfigurationError("H and K must be >= 1")
        if self.mode == "basic":
            if self.V is None:
                self.V = self.K
            if self.V != self.K:
                raise ConfigurationError(f"basic mode needs K == V, got K={self.K}, V={self.V}")
        else:
            if self.V is None or self.V < self.K:
                raise ConfigurationError(f"topic mode needs V >= K, got K={self.K}, V={self.V}")
            if self.loss == "xent":
                raise ConfigurationError("cross-entropy loss is only defined in basic mode")
        if min(self.a, self.b, self.c) <= 0:
            raise ConfigurationError("prior/noise variances a, b, c must be positive")
        get_cell(self.cell)


@dataclass
class GroupBias:
    group_id: str
    phi: np.ndarray


@dataclass
class StepPrediction:
    v: np.ndarray
    sigma: np.ndarray
    yhat: np.ndarray
    rho_used: float


@dataclass
class ModelState:
    """Everything learned: theta (W, U, b, P) and phi live in one ParamStore."""

    config: ModelConfig
    params: ParamStore
    group_ids: list
    B: np.ndarray | None = None

    def __post_init__(self):
        self.group_index = {g: i for i, g in enumerate(self.group_ids)}

    @property
    def phi(self) -> np.ndarray:
        return self.params["phi"]

    def cell_params(self) -> LstmParams:
        return LstmParams(self.params["W"], self.params["U"], self.params["b"])

    def group_bias(self, group_id) -> GroupBias:
        return GroupBias(group_id, self.phi[self.row(group_id)].copy())

    def row(self, group_id) -> int:
        try:
            return self.group_index[group_id]
        except KeyError:
            raise DataError(f"unknown group {group_id!r}") from None

    def theta_sq_norm(self) -> float:
        return float(sum(np.sum(self.params[k] ** 2) for k in THETA_NAMES))

    def topic_matrix(self) -> np.ndarray:
        if self.config.mode == "topic":
            if self.B is None:
                raise ConfigurationError("topic mode requires a topic matrix B")
            return self.B
        return np.eye(self.config.K)

    def copy(self) -> "ModelState":
        return ModelState(
            self.config,
            self.params.copy(),
            list(self.group_ids),
            None if self.B is None else self.B.copy(),
        )

    def equal(self, other: "ModelState") -> bool:
        if not self.params.equal(other.params) or self.group_ids != other.group_ids:
            return False
        if (self.B is None) != (other.B is None):
            return False
        return self.B is None or self.B.tobytes() == other.B.tobytes()


def init_topic_matrix(V: int, K: int, rng) -> np.ndarray:
    """Columns drawn from a flat Dirichlet, so each sums to one."""
    return rng.dirichlet(np.ones(V), size=K).T


def init_state(config: ModelConfig, group_ids, seed=0, init_scale: float = 0.1, B=None) -> ModelState:
    """Random theta, zero phi, and (topic mode) a Dirichlet-initialised B."""
    init_fn = get_cell(config.cell)[0]
    rng = np.random.default_rng(seed)
    cell = init_fn(int(rng.integers(2**31)), config.H, config.V, init_scale)
    P = rng.uniform(-init_scale, init_scale, size=(config.K, config.H))
    params = ParamStore(
        W=cell.W, U=cell.U, b=cell.b, P=P, phi=np.zeros((len(group_ids), config.K))
    )
    if config.mode == "topic":
        if B is None:
            B = init_topic_matrix(config.V, config.K, rng)
        B = np.array(B, dtype=DTYPE)
        if B.shape != (config.V, config.K):
            raise DimensionError(f"B must be {(config.V, config.K)}, got {B.shape}")
        if np.any(B < 0):
            raise DataError("topic matrix must be entrywise non-negative")
    else:
        B = None
    return ModelState(config, params, list(group_ids), B)


# ---------------------------------------------------------------- batches


@dataclass
class SequenceBatch:
    counts: np.ndarray  # (N, T, V) raw counts
    norm: np.ndarray  # (N, T, V) L1-normalised (zero where the order is empty)
    totals: np.ndarray  # (N, T)
    rho: np.ndarray  # (N, T)
    mask: np.ndarray  # (N, T) bool
    lengths: np.ndarray  # (N,)
    group_ids: list

    @property
    def N(self) -> int:
        return self.counts.shape[0]

    @property
    def T(self) -> int:
        return self.counts.shape[1]

    def inputs(self) -> np.ndarray:
        x = np.zeros_like(self.norm)
        x[:, 1:] = self.norm[:, :-1]
        return x


def make_batch(sequences, schedule: DecaySchedule) -> SequenceBatch:
    sequences = list(sequences)
    if not sequences:
        raise DataError("empty batch")
    V = sequences[0].V
    Tmax = max(s.T for s in sequences)
    N = len(sequences)
    counts = np.zeros((N, Tmax, V))
    deltas = np.zeros((N, Tmax))
    mask = np.zeros((N, Tmax), dtype=bool)
    for i, s in enumerate(sequences):
        if s.V != V:
            raise DimensionError("sequences in a batch disagree on V")
        if s.T == 0:
            raise DataError(f"group {s.group_id} has no orders")
        counts[i, : s.T] = s.counts
        deltas[i, : s.T] = s.deltas
        mask[i, : s.T] = True
    deltas[:, 0] = np.nan
    rho = schedule.rho_sequence(deltas) * mask
    totals = counts.sum(axis=2)
    safe = np.where(totals > 0, totals, 1.0)
    norm = counts / safe[..., None]
    return SequenceBatch(
        counts, norm, totals, rho, mask, np.array([s.T for s in sequences]), [s.group_id for s in sequences]
    )


# ---------------------------------------------------------------- forward


@dataclass
class ForwardResult:
    batch: SequenceBatch
    rows: np.ndarray  # (N,) phi row per sequence
    tape: list
    h: np.ndarray  # (N, T, H)
    hp: np.ndarray  # (N, T, K) projected hidden state
    v: np.ndarray  # (N, T, K)
    sigma: np.ndarray  # (N, T, K)
    yhat: np.ndarray  # (N, T, V)


def combine(rho_val, h_proj, phi):
    """rho * h_proj + (1 - rho) * phi, elementwise."""
    h_proj = np.asarray(h_proj, dtype=DTYPE)
    phi = np.asarray(phi, dtype=DTYPE)
    if h_proj.shape[-1] != phi.shape[-1]:
        raise DimensionError(f"combine got lengths {h_proj.shape[-1]} and {phi.shape[-1]}")
    rho_val = np.asarray(rho_val, dtype=DTYPE)
    if rho_val.ndim:
        rho_val = rho_val[..., None]
    return rho_val * h_proj + (1.0 - rho_val) * phi


def project_hidden(h, P):
    h = np.asarray(h, dtype=DTYPE)
    P = np.asarray(P, dtype=DTYPE)
    if P.ndim != 2 or h.shape[-1] != P.shape[1]:
        raise DimensionError(f"project_hidden got h{h.shape} and P{P.shape}")
    return h @ P.T


def forward_batch(state: ModelState, batch: SequenceBatch) -> ForwardResult:
    cfg = state.config
    if batch.counts.shape[2] != cfg.V:
        raise DimensionError(f"batch has V={batch.counts.shape[2]}, model expects V={cfg.V}")
    _, step, _ = get_cell(cfg.cell)
    rows = np.array([state.row(g) for g in batch.group_ids])
    p = state.cell_params()
    P = state.params["P"]
    x = batch.inputs()
    s = CellState.zeros(cfg.H, batch.N)
    tape = []
    hs = np.empty((batch.N, batch.T, cfg.H))
    for t in range(batch.T):
        s, cache = step(p, x[:, t], s)
        tape.append(cache)
        hs[:, t] = s.h
    hp = project_hidden(hs, P)
    phi = state.phi[rows][:, None, :]
    v = combine(batch.rho, hp, phi)
    sigma = softmax(v)
    if cfg.mode == "topic":
        yhat = batch.totals[..., None] * (sigma @ state.topic_matrix().T)
    else:
        yhat = sigma
    return ForwardResult(batch, rows, tape, hs, hp, v, sigma, yhat)


def _targets(cfg: ModelConfig, batch: SequenceBatch) -> np.ndarray:
    return batch.counts if cfg.mode == "topic" else batch.norm


def data_loss(state: ModelState, fwd: ForwardResult) -> np.ndarray:
    """Per-sequence data term (length N)."""
    cfg = state.config
    m = fwd.batch.mask
    if cfg.loss == "xent":
        logs = np.log(np.maximum(fwd.sigma, LOG_FLOOR))
        per_step = -np.sum(fwd.batch.norm * logs, axis=2)
    else:
        r = _targets(cfg, fwd.batch) - fwd.yhat
        per_step = np.sum(r * r, axis=2) / (2.0 * cfg.c)
    return np.sum(per_step * m, axis=1)


def objective(state: ModelState, batch: SequenceBatch, fwd: ForwardResult | None = None) -> float:
    """Full MAP objective restricted to the groups in ``batch``."""
    fwd = fwd if fwd is not None else forward_batch(state, batch)
    cfg = state.config
    rows = fwd.rows
    total = state.theta_sq_norm() / (2 * cfg.a)
    total += np.sum(state.phi[rows] ** 2) / (2 * cfg.b)
    total += float(np.sum(data_loss(state, fwd)))
    return float(total)


def dv_from_loss(state: ModelState, fwd: ForwardResult) -> np.ndarray:
    """d(data term)/d v for every step; zero on padded steps."""
    cfg = state.config
    batch = fwd.batch
    if cfg.loss == "xent":
        mass = batch.norm.sum(axis=2, keepdims=True)
        dv = fwd.sigma * mass - batch.norm
    else:
        dyhat = (fwd.yhat - _targets(cfg, batch)) / cfg.c
        if cfg.mode == "topic":
            dsigma = batch.totals[..., None] * (dyhat @ state.topic_matrix())
        else:
            dsigma = dyhat
        dv = softmax_backward(fwd.sigma, dsigma)
    return dv * batch.mask[..., None]


def backward(state: ModelState, fwd: ForwardResult, dv: np.ndarray | None = None):
    """Gradients of the data term. Returns ``(theta_grads, phi_grads_per_sequence)``."""
    cfg = state.config
    _, _, cell_backward = get_cell(cfg.cell)
    if dv is None:
        dv = dv_from_loss(state, fwd)
    rho = fwd.batch.rho[..., None]
    dphi = np.sum((1.0 - rho) * dv, axis=1)  # (N, K)
    dhp = rho * dv
    N, T, K = dhp.shape
    dP = dhp.reshape(-1, K).T @ fwd.h.reshape(-1, cfg.H)
    dh = dhp @ state.params["P"]
    grads, _ = cell_backward(state.cell_params(), fwd.tape, [dh[:, t] for t in range(T)])
    grads["P"] = dP
    return grads, dphi


def loss_and_grads(state: ModelState, batch: SequenceBatch, theta_reg_weight: float = 1.0):
    """Objective over ``batch`` plus its gradients.

    The theta prior term is scaled by ``theta_reg_weight`` so that mini-batch
    gradients summed over an epoch add up to the full-objective gradient.
    Returns ``(loss, theta_grads, phi_grad)`` with ``phi_grad`` shaped like
    the full phi matrix (rows outside the batch are zero).
    """
    cfg = state.config
    fwd = forward_batch(state, batch)
    data = data_loss(state, fwd)
    loss = float(np.sum(data))
    loss += theta_reg_weight * state.theta_sq_norm() / (2 * cfg.a)
    rows = fwd.rows
    loss += float(np.sum(state.phi[rows] ** 2)) / (2 * cfg.b)
    if not np.isfinite(loss):
        bad = [fwd.batch.group_ids[i] for i in np.flatnonzero(~np.isfinite(data))]
        raise NumericalError(f"non-finite objective (groups: {bad or 'regulariser'})")
    tgrads, dphi_seq = backward(state, fwd)
    for k in THETA_NAMES:
        tgrads[k] = tgrads[k] + theta_reg_weight * state.params[k] / cfg.a
    phi_grad = np.zeros_like(state.phi)
    np.add.at(phi_grad, rows, dphi_seq)
    phi_grad[rows] += state.phi[rows] / cfg.b
    return loss, tgrads, phi_grad, fwd


# ------------------------------------------------- single-sequence surface


def forward_sequence(state: ModelState, seq: GroupSequence) -> list:
    """Step-by-step predictions for one group."""
    batch = make_batch([seq], state.config.decay)
    fwd = forward_batch(state, batch)
    return [
        StepPrediction(fwd.v[0, t].copy(), fwd.sigma[0, t].copy(), fwd.yhat[0, t].copy(), float(batch.rho[0, t]))
        for t in range(seq.T)
    ]


def sequence_loss(config: ModelConfig, predictions, seq: GroupSequence) -> float:
    """Data term sum_t |y_t - yhat_t|^2 / 2c for one group's predictions."""
    if len(predictions) != seq.T:
        raise DimensionError(f"{len(predictions)} predictions for {seq.T} orders")
    total = 0.0
    for pred, y in zip(predictions, seq.counts):
        if config.mode == "basic":
            n = y.sum()
            y = y / n if n > 0 else y
        r = y - pred.yhat
        total += float(r @ r) / (2.0 * config.c)
    if not np.isfinite(total):
        raise NumericalError(f"non-finite loss for group {seq.group_id}")
    return total


def cross_entropy_loss(predictions, seq: GroupSequence) -> float:
    """sum_t -sum_i ybar_ti log sigma_ti, with the log floored at 1e-12."""
    if len(predictions) != seq.T:
        raise DimensionError(f"{len(predictions)} predictions for {seq.T} orders")
    total = 0.0
    for pred, y in zip(predictions, seq.counts):
        n = y.sum()
        ybar = y / n if n > 0 else y
        total -= float(ybar @ np.log(np.maximum(pred.sigma, LOG_FLOOR)))
    if not np.isfinite(total):
        raise NumericalError(f"non-finite loss for group {seq.group_id}")
    return total


def full_objective(state: ModelState, dataset: Dataset) -> float:
    """Objective over every group of ``dataset`` (each group counted once)."""
    return objective(state, make_batch(dataset.sequences, state.config.decay))
