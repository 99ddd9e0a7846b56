"""Mixed membership RNN for grouped, irregularly spaced count sequences."""

from .baselines import impute, preset
from .data import (
    Dataset,
    GroupSequence,
    HoldoutOrder,
    SyntheticSpec,
    aggregate_rare_items,
    generate_synthetic,
    load_orders_csv,
    split_holdout_last,
    write_orders_csv,
)
from .decay import DecaySpec, ZeroDecay, rho
from .estimator import MMRNN
from .evaluation import EvalReport, SweepResult, emit_report, evaluate_holdout, kappa_sweep
from .model import ModelConfig, ModelState, forward_sequence, init_state
from .training import TrainConfig, TrainTrace, nmf_update_B, train

__version__ = "0.1.0"

__all__ = [
    "MMRNN",
    "Dataset",
    "DecaySpec",
    "EvalReport",
    "GroupSequence",
    "HoldoutOrder",
    "ModelConfig",
    "ModelState",
    "SweepResult",
    "SyntheticSpec",
    "TrainConfig",
    "TrainTrace",
    "ZeroDecay",
    "aggregate_rare_items",
    "emit_report",
    "evaluate_holdout",
    "forward_sequence",
    "generate_synthetic",
    "impute",
    "init_state",
    "kappa_sweep",
    "load_orders_csv",
    "nmf_update_B",
    "preset",
    "rho",
    "split_holdout_last",
    "train",
    "write_orders_csv",
]
