"""scikit-learn style front end.

``MMRNN.fit`` takes a :class:`~mmrnn.data.Dataset` of group sequences;
``predict`` / ``score`` / ``evaluate`` take held-out orders (group id, gap
and the order itself, whose size scales topic-mode predictions).
"""
from __future__ import annotations

import json

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .baselines import IMPUTE_POLICIES, impute, impute_holdout, preset
from .data import Dataset, check_dataset
from .decay import DecaySpec
from .evaluation import EvalReport, evaluate_holdout, predict_holdout
from .exceptions import ConfigurationError
from .model import ModelConfig, ModelState, init_state
from .numerics import ParamStore
from .training import TrainConfig, train

BASELINES = ("mmrnn", "lstm", "exchangeable", "impute-mean", "impute-forward", "impute-zero")


class MMRNN(BaseEstimator):
    """Mixed membership RNN.

    Parameters
    ----------
    mode : {"basic", "topic"}
        ``basic`` predicts normalised histograms directly; ``topic`` predicts
        counts through a non-negative items x topics matrix.
    hidden_dim : int
        LSTM hidden size.
    n_topics : int
        Topic count in topic mode (ignored in basic mode).
    t0, kappa : float
        Decay ``(t0 + dt) ** -kappa``.
    baseline : str
        One of ``mmrnn``, ``lstm`` (kappa forced to 0), ``exchangeable``
        (decay forced to 0), or ``impute-{mean,forward,zero}`` (daily-grid
        imputation feeding the kappa = 0 model).
    a, b, c : float
        Prior variances of theta and phi, and the noise variance.
    batch_size : int or None
        Groups per shared-parameter step; ``None`` is one full-batch step
        per epoch.
    """

    def __init__(
        self,
        mode="basic",
        hidden_dim=10,
        n_topics=25,
        t0=1.0,
        kappa=0.1,
        baseline="mmrnn",
        loss="l2",
        cell="lstm",
        a=100.0,
        b=100.0,
        c=1.0,
        lr=0.01,
        epochs=20,
        batch_size=None,
        shuffle=False,
        update_B=True,
        nmf_inner_iters=1,
        init_scale=0.1,
        random_state=0,
    ):
        self.mode = mode
        self.hidden_dim = hidden_dim
        self.n_topics = n_topics
        self.t0 = t0
        self.kappa = kappa
        self.baseline = baseline
        self.loss = loss
        self.cell = cell
        self.a = a
        self.b = b
        self.c = c
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.shuffle = shuffle
        self.update_B = update_B
        self.nmf_inner_iters = nmf_inner_iters
        self.init_scale = init_scale
        self.random_state = random_state

    def _impute_policy(self):
        if self.baseline not in BASELINES:
            raise ConfigurationError(f"baseline must be one of {BASELINES}, got {self.baseline!r}")
        if self.baseline.startswith("impute-"):
            policy = self.baseline.split("-", 1)[1]
            assert policy in IMPUTE_POLICIES
            return policy
        return None

    def model_config(self, V: int) -> ModelConfig:
        K = V if self.mode == "basic" else self.n_topics
        base = ModelConfig(
            mode=self.mode,
            H=self.hidden_dim,
            K=K,
            V=V,
            decay=DecaySpec(self.t0, self.kappa),
            a=self.a,
            b=self.b,
            c=self.c,
            loss=self.loss,
            cell=self.cell,
        )
        kind = {"mmrnn": "mmrnn", "exchangeable": "exchangeable"}.get(self.baseline, "vanilla_lstm")
        return preset(kind, base)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            epochs=self.epochs,
            seed=self.random_state,
            update_B=self.update_B,
            nmf_inner_iters=self.nmf_inner_iters,
            shuffle=self.shuffle,
            batch_size=self.batch_size,
        )

    def fit(self, X: Dataset, y=None, B_init=None, callback=None):
        check_dataset(X, allow_regridded=True)
        policy = self._impute_policy()
        self.impute_mean_ = None
        if policy is not None:
            self.impute_mean_ = X.mean_count_vector()
            X = impute(X, policy, self.impute_mean_)
        config = self.model_config(X.V)
        state = init_state(config, X.group_ids, seed=self.random_state, init_scale=self.init_scale, B=B_init)
        self.state_, self.trace_ = train(self.train_config(), state, X, callback=callback)
        self.history_ = X
        self.n_features_in_ = X.V
        return self

    @property
    def config_(self) -> ModelConfig:
        check_is_fitted(self, "state_")
        return self.state_.config

    @property
    def topic_matrix_(self):
        check_is_fitted(self, "state_")
        return self.state_.B

    def evaluate(self, holdout) -> EvalReport:
        check_is_fitted(self, "state_")
        return evaluate_holdout(self.state_, self.history_, holdout, self._impute_policy(), self.impute_mean_)

    def predict(self, holdout) -> np.ndarray:
        """Predicted next order for each held-out entry, shape (N, V)."""
        check_is_fitted(self, "state_")
        policy = self._impute_policy()
        history = self.history_
        if policy is not None:
            history, holdout = impute_holdout(history, holdout, policy, self.impute_mean_)
        return predict_holdout(self.state_, history, holdout)

    def score(self, holdout, y=None) -> float:
        """Negative mean held-out error (larger is better)."""
        return -self.evaluate(holdout).overall_mean

    def save(self, path) -> None:
        """Write fitted parameters and hyperparameters to an ``.npz`` file."""
        check_is_fitted(self, "state_")
        arrays = self.state_.params.to_dict()
        if self.state_.B is not None:
            arrays["B"] = self.state_.B
        if self.impute_mean_ is not None:
            arrays["impute_mean"] = self.impute_mean_
        arrays["group_ids"] = np.array(self.state_.group_ids, dtype=str)
        arrays["params_json"] = np.array(json.dumps(self.get_params()))
        arrays["trace"] = np.array(self.trace_.objective)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path, train: Dataset) -> "MMRNN":
        """Restore a model saved with :meth:`save`; ``train`` is the training
        split it was fitted on (needed as prediction history)."""
        from .training import TrainTrace

        with np.load(path, allow_pickle=False) as z:
            est = cls(**json.loads(str(z["params_json"])))
            group_ids = [str(g) for g in z["group_ids"]]
            params = ParamStore(**{k: z[k] for k in ("W", "U", "b", "P", "phi")})
            B = z["B"] if "B" in z.files else None
            est.impute_mean_ = z["impute_mean"] if "impute_mean" in z.files else None
            est.trace_ = TrainTrace(list(z["trace"]), [])
        policy = est._impute_policy()
        if policy is not None:
            train = impute(train, policy, est.impute_mean_)
        est.state_ = ModelState(est.model_config(train.V), params, group_ids, B)
        est.history_ = train
        est.n_features_in_ = train.V
        return est
