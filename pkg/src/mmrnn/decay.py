"""Forgetting schedules mapping the gap between two orders to a weight in [0, 1].

The weight gates the recurrent hidden state against the group bias: 1 means
the prediction is driven entirely by the RNN, 0 means it is driven entirely
by the group bias. The first step of every sequence always gets weight 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, DataError


class DecaySchedule:
    """Base class: a non-increasing map from gap (days) to [0, 1]."""

    def weight(self, delta_t: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def __call__(self, delta_t, is_first_step=False):
        dt = np.asarray(delta_t, dtype=np.float64)
        first = np.asarray(is_first_step, dtype=bool)
        flat = np.atleast_1d(dt)
        if np.any(flat[~np.isnan(flat)] < 0):
            raise DataError(f"negative time gap: {delta_t}")
        safe = np.where(np.isnan(dt) | first, 0.0, dt)
        out = np.where(first, 0.0, self.weight(safe))
        if out.ndim == 0:
            return float(out)
        return out

    def rho_sequence(self, deltas: np.ndarray) -> np.ndarray:
        """Weights for a whole sequence; step 0 is the first step."""
        deltas = np.asarray(deltas, dtype=np.float64)
        first = np.zeros(deltas.shape, dtype=bool)
        first[..., 0] = True
        return self(deltas, first)


@dataclass(frozen=True)
class DecaySpec(DecaySchedule):
    """Power-law schedule ``(t0 + dt) ** -kappa``.

    ``t0 >= 1`` keeps the weight inside [0, 1] for every non-negative gap.
    """

    t0: float = 1.0
    kappa: float = 0.1

    def __post_init__(self):
        if not (math.isfinite(self.t0) and self.t0 >= 1.0):
            raise ConfigurationError(f"t0 must be >= 1, got {self.t0}")
        if not self.kappa >= 0.0:
            raise ConfigurationError(f"kappa must be >= 0, got {self.kappa}")

    def weight(self, delta_t):
        base = self.t0 + np.asarray(delta_t, dtype=np.float64)
        if self.kappa == 0.0:
            return np.ones_like(base)
        return np.power(base, -self.kappa)


@dataclass(frozen=True)
class ZeroDecay(DecaySchedule):
    """Weight 0 everywhere: predictions come from the group bias alone."""

    def weight(self, delta_t):
        return np.zeros_like(np.asarray(delta_t, dtype=np.float64))


def rho(spec: DecaySchedule, delta_t: float, is_first_step: bool = False) -> float:
    """Scalar weight for a single step."""
    return spec(delta_t, is_first_step)
