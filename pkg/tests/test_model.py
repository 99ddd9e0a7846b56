from dataclasses import replace

import numpy as np
import pytest
from conftest import gradient_check, random_dataset, random_instance, random_state_for

from mmrnn.baselines import lstm_pipeline_predict, preset
from mmrnn.data import Dataset, GroupSequence
from mmrnn.decay import DecaySpec, ZeroDecay
from mmrnn.exceptions import ConfigurationError, DataError, DimensionError
from mmrnn.model import (
    ModelConfig,
    StepPrediction,
    combine,
    cross_entropy_loss,
    forward_batch,
    forward_sequence,
    init_state,
    make_batch,
    project_hidden,
    sequence_loss,
)


@pytest.mark.parametrize(
    "r,h,phi,out",
    [(1.0, [2, -1], [9, 9], [2, -1]), (0.0, [2, -1], [9, 9], [9, 9]), (0.5, [2, 0], [0, 2], [1, 1])],
)
def test_combine(r, h, phi, out):
    np.testing.assert_array_equal(combine(r, h, phi), out)


def test_combine_length_mismatch():
    with pytest.raises(DimensionError):
        combine(0.5, [1, 2], [1, 2, 3])


def test_project_hidden(rng):
    h = rng.normal(size=3)
    np.testing.assert_array_equal(project_hidden(h, np.eye(3)), h)
    np.testing.assert_array_equal(project_hidden(np.zeros(3), rng.normal(size=(2, 3))), 0.0)
    P = rng.normal(size=(2, 3))
    expect = [sum(P[k, j] * h[j] for j in range(3)) for k in range(2)]
    np.testing.assert_allclose(project_hidden(h, P), expect, rtol=1e-14)
    with pytest.raises(DimensionError):
        project_hidden(h, np.eye(2))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ModelConfig(mode="basic", K=3, V=4)
    with pytest.raises(ConfigurationError):
        ModelConfig(mode="topic", K=5, V=4)
    with pytest.raises(ConfigurationError):
        ModelConfig(mode="topic", K=2, V=4, loss="xent")
    with pytest.raises(ConfigurationError):
        ModelConfig(mode="basic", K=2, c=0.0)


def test_phi_starts_at_zero():
    st = init_state(ModelConfig(K=3), ["a", "b"], seed=1)
    assert np.all(st.phi == 0)
    assert st.group_bias("b").phi.shape == (3,)
    with pytest.raises(DataError):
        st.row("zzz")


def test_t1_prediction_ignores_theta(rng):
    ds = random_dataset(rng, D=2, T_range=(1, 1))
    st = random_state_for(rng, ds)
    before = forward_sequence(st, ds.sequences[0])[0].yhat
    for k in ("W", "U", "b", "P"):
        st.params[k] = rng.normal(scale=5, size=st.params[k].shape)
    after = forward_sequence(st, ds.sequences[0])[0].yhat
    assert np.array_equal(before, after)


@pytest.mark.parametrize("mode", ["basic", "topic"])
def test_first_step_independent_of_theta_in_long_sequences(rng, mode):
    ds = random_dataset(rng, D=3, T_range=(3, 6))
    st = random_state_for(rng, ds, mode=mode)
    first = forward_batch(st, make_batch(ds.sequences, st.config.decay)).yhat[:, 0]
    for k in ("W", "U", "b", "P"):
        st.params[k] = st.params[k] + rng.normal(size=st.params[k].shape)
    again = forward_batch(st, make_batch(ds.sequences, st.config.decay)).yhat[:, 0]
    assert np.array_equal(first, again)


@pytest.mark.parametrize("cell", ["lstm", "rnn"])
def test_kappa_zero_equals_lstm_pipeline(rng, cell):
    ds = random_dataset(rng, D=4, T_range=(2, 7), V=5)
    st = random_state_for(rng, ds, kappa=0.0, cell=cell)
    batch = make_batch(ds.sequences, st.config.decay)
    mm = forward_batch(st, batch).sigma
    ref = lstm_pipeline_predict(st, batch)
    for i, s in enumerate(ds.sequences):
        assert np.array_equal(mm[i, 1 : s.T], ref[i, 1 : s.T])


def test_zero_decay_is_constant_within_group(rng):
    ds = random_dataset(rng, D=3, T_range=(3, 6))
    st = random_state_for(rng, ds)
    st.config = preset("exchangeable", st.config)
    for s in ds.sequences:
        preds = forward_sequence(st, s)
        for p in preds[1:]:
            assert np.array_equal(p.yhat, preds[0].yhat)
            assert p.rho_used == 0.0


def test_topic_identity_unit_count_gives_sigma(rng):
    counts = np.zeros((3, 3))
    counts[[0, 1, 2], [2, 0, 1]] = 1.0
    ds = Dataset(["a", "b", "c"], [GroupSequence("g", np.array([np.nan, 2.0, 5.0]), counts)])
    st = random_state_for(rng, ds, mode="topic", K=3)
    st.B = np.eye(3)
    for p in forward_sequence(st, ds.sequences[0]):
        np.testing.assert_allclose(p.yhat, p.sigma, rtol=0, atol=1e-15)


@pytest.mark.parametrize("mode", ["basic", "topic"])
def test_prediction_simplex(rng, mode):
    ds = random_dataset(rng, D=3, T_range=(2, 6), V=6)
    st = random_state_for(rng, ds, mode=mode, K=3)
    for s in ds.sequences:
        for p in forward_sequence(st, s):
            assert abs(p.sigma.sum() - 1) <= 1e-12
            if mode == "basic":
                assert abs(p.yhat.sum() - 1) <= 1e-12
            else:
                assert np.all(p.yhat >= 0)


def _preds(yhats):
    return [StepPrediction(np.zeros_like(y), y, y, 1.0) for y in yhats]


def test_sequence_loss_examples():
    counts = np.array([[1.0, 3.0], [2.0, 2.0]])
    seq = GroupSequence("g", np.array([np.nan, 1.0]), counts)
    basic = ModelConfig(K=2)
    norm = counts / counts.sum(axis=1, keepdims=True)
    assert sequence_loss(basic, _preds(norm), seq) == 0.0

    yhat = np.array([[0.5, 0.5], [0.9, 0.1]])
    by_hand = ((0.25 - 0.5) ** 2 + (0.75 - 0.5) ** 2 + (0.5 - 0.9) ** 2 + (0.5 - 0.1) ** 2) / 2.0
    assert sequence_loss(basic, _preds(yhat), seq) == pytest.approx(by_hand, rel=1e-14)
    assert sequence_loss(replace(basic, c=2.0), _preds(yhat), seq) == pytest.approx(by_hand / 2, rel=1e-14)

    topic = ModelConfig(mode="topic", K=1, V=2)
    assert sequence_loss(topic, _preds(counts), seq) == 0.0
    with pytest.raises(DimensionError):
        sequence_loss(basic, _preds(yhat[:1]), seq)


def test_cross_entropy_examples(rng):
    counts = rng.integers(1, 5, size=(3, 4)).astype(float)
    seq = GroupSequence("g", np.array([np.nan, 1.0, 1.0]), counts)
    uniform = _preds(np.full((3, 4), 0.25))
    assert cross_entropy_loss(uniform, seq) == pytest.approx(3 * np.log(4), rel=1e-14)

    ybar = counts / counts.sum(axis=1, keepdims=True)
    entropy = -np.sum(ybar * np.log(ybar))
    assert cross_entropy_loss(_preds(ybar), seq) == pytest.approx(entropy, rel=1e-14)

    sig = rng.dirichlet(np.ones(4), size=3)
    brute = 0.0
    for t in range(3):
        for i in range(4):
            brute -= ybar[t, i] * np.log(sig[t, i])
    assert cross_entropy_loss(_preds(sig), seq) == pytest.approx(brute, rel=1e-13)


def test_cross_entropy_log_floor():
    seq = GroupSequence("g", np.array([np.nan]), np.array([[1.0, 0.0]]))
    assert cross_entropy_loss(_preds(np.array([[0.0, 1.0]])), seq) == pytest.approx(-np.log(1e-12))


def test_batch_matches_single_sequences(rng):
    ds = random_dataset(rng, D=4, T_range=(1, 6))
    st = random_state_for(rng, ds, mode="topic", K=2)
    fwd = forward_batch(st, make_batch(ds.sequences, st.config.decay))
    for i, s in enumerate(ds.sequences):
        single = np.array([p.yhat for p in forward_sequence(st, s)])
        np.testing.assert_allclose(fwd.yhat[i, : s.T], single, rtol=1e-13, atol=1e-15)


def test_zero_decay_schedule_in_batch():
    seq = GroupSequence("g", np.array([np.nan, 1.0, 30.0]), np.ones((3, 2)))
    assert np.all(make_batch([seq], ZeroDecay()).rho == 0)
    np.testing.assert_allclose(make_batch([seq], DecaySpec(1, 1)).rho[0], [0, 0.5, 1 / 31])


@pytest.mark.parametrize("seed", range(20))
def test_full_objective_gradient(seed):
    ds, st = random_instance(seed)
    assert gradient_check(st, ds) <= 1e-4
