import numpy as np
import pytest
from conftest import random_dataset
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mmrnn import MMRNN
from mmrnn.data import split_holdout_last
from mmrnn.exceptions import ConfigurationError, DataError

FAST = dict(hidden_dim=3, epochs=2)


@pytest.fixture
def corpus(rng):
    return split_holdout_last(random_dataset(rng, D=6, T_range=(2, 6), V=5))


def test_params_round_trip():
    est = MMRNN(mode="topic", n_topics=3, kappa=0.3)
    params = est.get_params()
    assert params["kappa"] == 0.3 and params["n_topics"] == 3
    twin = clone(est)
    assert twin.get_params() == params
    assert est.set_params(kappa=1.0).kappa == 1.0


def test_not_fitted(corpus):
    with pytest.raises(NotFittedError):
        MMRNN().predict(corpus[1])


def test_bad_baseline(corpus):
    with pytest.raises(ConfigurationError):
        MMRNN(baseline="gru-d").fit(corpus[0])


def test_rejects_non_dataset():
    with pytest.raises(DataError):
        MMRNN().fit(np.ones((3, 3)))


@pytest.mark.parametrize("mode", ["basic", "topic"])
def test_predict_shapes(corpus, mode):
    train, hold, _ = corpus
    est = MMRNN(mode=mode, n_topics=2, **FAST).fit(train)
    yhat = est.predict(hold)
    assert yhat.shape == (len(hold), train.V)
    if mode == "basic":
        np.testing.assert_allclose(yhat.sum(axis=1), 1.0, atol=1e-12)
    else:
        assert np.all(yhat >= 0)
    assert est.score(hold) == -est.evaluate(hold).overall_mean
    assert len(est.trace_.objective) == 2


@pytest.mark.parametrize("baseline", ["lstm", "exchangeable", "impute-forward", "impute-mean", "impute-zero"])
def test_baselines_fit(corpus, baseline):
    train, hold, _ = corpus
    est = MMRNN(mode="topic", n_topics=2, baseline=baseline, **FAST).fit(train)
    rep = est.evaluate(hold)
    assert rep.n == len(hold) and np.all(np.isfinite(rep.errors))
    # lag buckets use the real gap even for regridded baselines
    np.testing.assert_array_equal(rep.deltas, [h.delta_t for h in hold])


@pytest.mark.parametrize("baseline", ["mmrnn", "impute-mean"])
def test_save_load(tmp_path, corpus, baseline):
    train, hold, _ = corpus
    est = MMRNN(mode="topic", n_topics=2, baseline=baseline, **FAST).fit(train)
    est.save(tmp_path / "m.npz")
    back = MMRNN.load(tmp_path / "m.npz", train)
    assert back.get_params() == est.get_params()
    assert back.state_.equal(est.state_)
    assert np.array_equal(back.predict(hold), est.predict(hold))
