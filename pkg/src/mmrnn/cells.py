"""Recurrent cells with explicit forward and backward passes.

Both cells accept either a single vector ``x`` of shape ``(X,)`` or a batch
of shape ``(N, X)``; batches are how the trainer pushes all groups through
the network at once. Gates are stacked in the order input, forget,
cell-candidate, output.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, DimensionError, StateError
from .numerics import DTYPE, sigmoid


@dataclass
class LstmParams:
    W: np.ndarray  # (4H, X)
    U: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    @property
    def H(self) -> int:
        return self.U.shape[1]

    @property
    def X(self) -> int:
        return self.W.shape[1]

    def check(self) -> None:
        H = self.H
        if self.W.shape[0] != 4 * H or self.U.shape != (4 * H, H) or self.b.shape != (4 * H,):
            raise DimensionError(
                f"inconsistent LSTM shapes W={self.W.shape} U={self.U.shape} b={self.b.shape}"
            )

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "U": self.U, "b": self.b}


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, H: int, batch: int | None = None) -> "CellState":
        shape = (H,) if batch is None else (batch, H)
        return cls(np.zeros(shape, dtype=DTYPE), np.zeros(shape, dtype=DTYPE))


def lstm_init(rng_seed, H: int, X: int, scale: float = 0.1, forget_bias: float = 1.0) -> LstmParams:
    """Uniform(-scale, scale) weights; ``forget_bias`` is added to the forget-gate biases."""
    if H < 1 or X < 1:
        raise ConfigurationError(f"LSTM dimensions must be >= 1, got H={H}, X={X}")
    if scale < 0:
        raise ConfigurationError("scale must be non-negative")
    rng = np.random.default_rng(rng_seed)
    W = rng.uniform(-scale, scale, size=(4 * H, X))
    U = rng.uniform(-scale, scale, size=(4 * H, H))
    b = rng.uniform(-scale, scale, size=4 * H)
    b[H:2 * H] += forget_bias
    return LstmParams(W, U, b)


def lstm_forward(p: LstmParams, x: np.ndarray, s: CellState):
    """One LSTM step. Returns ``(new_state, cache)``."""
    H = p.H
    x = np.asarray(x, dtype=DTYPE)
    if x.shape[-1] != p.X or s.h.shape[-1] != H or s.c.shape != s.h.shape:
        raise DimensionError(
            f"LSTM step got x{x.shape}, h{s.h.shape}, c{s.c.shape} for H={H}, X={p.X}"
        )
    a = x @ p.W.T + s.h @ p.U.T + p.b
    i = sigmoid(a[..., :H])
    f = sigmoid(a[..., H:2 * H])
    g = np.tanh(a[..., 2 * H:3 * H])
    o = sigmoid(a[..., 3 * H:])
    c = f * s.c + i * g
    tc = np.tanh(c)
    h = o * tc
    cache = (x, s.h, s.c, i, f, g, o, tc)
    return CellState(h, c), cache


def lstm_backward(p: LstmParams, tape, dh_steps):
    """Full backpropagation through time over a forward tape.

    ``tape`` is the list of caches from consecutive ``lstm_forward`` calls and
    ``dh_steps`` holds d(loss)/d(h_t) for each step (same shapes as h_t).
    Returns ``(grads, dx_steps)`` with ``grads`` keyed ``W``, ``U``, ``b``.
    """
    if len(tape) != len(dh_steps):
        raise StateError(f"tape has {len(tape)} steps but {len(dh_steps)} upstream gradients")
    dW = np.zeros_like(p.W)
    dU = np.zeros_like(p.U)
    db = np.zeros_like(p.b)
    dxs = [None] * len(tape)
    if not tape:
        return {"W": dW, "U": dU, "b": db}, dxs
    dh_next = np.zeros_like(tape[-1][1])
    dc_next = np.zeros_like(tape[-1][2])
    for t in range(len(tape) - 1, -1, -1):
        x, h_prev, c_prev, i, f, g, o, tc = tape[t]
        dh = dh_steps[t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=-1,
        )
        if da.ndim == 1:
            dW += np.outer(da, x)
            dU += np.outer(da, h_prev)
            db += da
        else:
            dW += da.T @ x
            dU += da.T @ h_prev
            db += da.sum(axis=0)
        dxs[t] = da @ p.W
        dh_next = da @ p.U
        dc_next = dc * f
    return {"W": dW, "U": dU, "b": db}, dxs


def rnn_init(rng_seed, H: int, X: int, scale: float = 0.1) -> LstmParams:
    """Parameters for the tanh cell, stored in the same container (one gate block)."""
    if H < 1 or X < 1:
        raise ConfigurationError(f"RNN dimensions must be >= 1, got H={H}, X={X}")
    rng = np.random.default_rng(rng_seed)
    return LstmParams(
        rng.uniform(-scale, scale, size=(H, X)),
        rng.uniform(-scale, scale, size=(H, H)),
        rng.uniform(-scale, scale, size=H),
    )


def rnn_forward(p: LstmParams, x: np.ndarray, s: CellState):
    """h' = tanh(W x + U h + b); the memory slot ``c`` is carried unchanged."""
    x = np.asarray(x, dtype=DTYPE)
    if x.shape[-1] != p.W.shape[1] or s.h.shape[-1] != p.U.shape[0]:
        raise DimensionError(f"RNN step got x{x.shape}, h{s.h.shape}")
    h = np.tanh(x @ p.W.T + s.h @ p.U.T + p.b)
    return CellState(h, s.c), (x, s.h, h)


def rnn_backward(p: LstmParams, tape, dh_steps):
    if len(tape) != len(dh_steps):
        raise StateError(f"tape has {len(tape)} steps but {len(dh_steps)} upstream gradients")
    dW = np.zeros_like(p.W)
    dU = np.zeros_like(p.U)
    db = np.zeros_like(p.b)
    dxs = [None] * len(tape)
    if not tape:
        return {"W": dW, "U": dU, "b": db}, dxs
    dh_next = np.zeros_like(tape[-1][1])
    for t in range(len(tape) - 1, -1, -1):
        x, h_prev, h = tape[t]
        da = (dh_steps[t] + dh_next) * (1.0 - h * h)
        if da.ndim == 1:
            dW += np.outer(da, x)
            dU += np.outer(da, h_prev)
            db += da
        else:
            dW += da.T @ x
            dU += da.T @ h_prev
            db += da.sum(axis=0)
        dxs[t] = da @ p.W
        dh_next = da @ p.U
    return {"W": dW, "U": dU, "b": db}, dxs


CELLS = {
    "lstm": (lstm_init, lstm_forward, lstm_backward),
    "rnn": (rnn_init, rnn_forward, rnn_backward),
}


def get_cell(name: str):
    try:
        return CELLS[name]
    except KeyError:
        raise ConfigurationError(f"unknown cell {name!r}; choose from {sorted(CELLS)}") from None
