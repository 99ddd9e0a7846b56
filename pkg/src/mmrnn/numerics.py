"""Small numerical toolkit: stable softmax, a parameter/gradient store,
plain SGD and a central-difference gradient oracle.

Everything works in float64.
"""
from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from .exceptions import ConfigurationError, DimensionError, NumericalError

DTYPE = np.float64


def softmax(v: np.ndarray) -> np.ndarray:
    """Softmax along the last axis, with max-subtraction."""
    v = np.asarray(v, dtype=DTYPE)
    if v.ndim == 0 or v.shape[-1] == 0:
        raise DimensionError("softmax of an empty vector")
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(sigma: np.ndarray, dsigma: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product J_softmax^T @ dsigma (row-wise)."""
    return sigma * (dsigma - np.sum(sigma * dsigma, axis=-1, keepdims=True))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=DTYPE)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relative_error(a, f) -> np.ndarray:
    """Elementwise |a - f| / max(|a|, |f|, 1e-8)."""
    a = np.asarray(a, dtype=DTYPE)
    f = np.asarray(f, dtype=DTYPE)
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)


class ParamStore:
    """Named float64 arrays, each paired with a same-shape gradient buffer."""

    def __init__(self, **slots: np.ndarray):
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}
        for name, value in slots.items():
            self.add(name, value)

    def add(self, name: str, value) -> None:
        value = np.array(value, dtype=DTYPE)
        if not np.all(np.isfinite(value)):
            raise NumericalError(f"non-finite initial value for slot {name!r}")
        self._values[name] = value
        self._grads[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, value) -> None:
        value = np.asarray(value, dtype=DTYPE)
        if value.shape != self._values[name].shape:
            raise DimensionError(
                f"slot {name!r} has shape {self._values[name].shape}, got {value.shape}"
            )
        self._values[name] = value.copy()

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def names(self) -> list[str]:
        return list(self._values)

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def accumulate(self, name: str, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=DTYPE)
        if g.shape != self._grads[name].shape:
            raise DimensionError(
                f"gradient for {name!r} has shape {g.shape}, expected {self._grads[name].shape}"
            )
        self._grads[name] += g

    def zero_grads(self) -> None:
        for g in self._grads.values():
            g[...] = 0.0

    def squared_norm(self) -> float:
        return float(sum(np.sum(v * v) for v in self._values.values()))

    def copy(self) -> "ParamStore":
        new = ParamStore()
        for name, value in self._values.items():
            new._values[name] = value.copy()
            new._grads[name] = self._grads[name].copy()
        return new

    def to_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self._values.items()}

    def grads_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self._grads.items()}

    def equal(self, other: "ParamStore") -> bool:
        """Bitwise equality of values."""
        if self.names() != other.names():
            return False
        return all(
            self[k].shape == other[k].shape and self[k].tobytes() == other[k].tobytes()
            for k in self
        )

    def __repr__(self) -> str:
        shapes = ", ".join(f"{k}={v.shape}" for k, v in self._values.items())
        return f"ParamStore({shapes})"


def sgd_step(store: ParamStore, lr: float, names=None) -> ParamStore:
    """In-place ``v <- v - lr * grad(v)``. Gradients are left untouched."""
    if not lr > 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    for name in names if names is not None else store.names():
        store._values[name] -= lr * store._grads[name]
    return store


def finite_diff_grad(
    loss_fn: Callable[[ParamStore], float],
    store: ParamStore,
    eps: float = 1e-5,
    names=None,
) -> dict[str, np.ndarray]:
    """Central-difference estimate of d loss / d store, one coordinate at a time.

    ``store`` is perturbed in place and restored exactly afterwards.
    """
    if not eps > 0:
        raise ConfigurationError("eps must be positive")
    out = {}
    for name in names if names is not None else store.names():
        value = store[name]
        flat = value.reshape(-1)
        est = np.zeros(flat.shape, dtype=DTYPE)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn(store)
            flat[i] = orig - eps
            down = loss_fn(store)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericalError(f"loss is not finite while perturbing {name}[{i}]")
            est[i] = (up - down) / (2.0 * eps)
        out[name] = est.reshape(value.shape)
    return out
