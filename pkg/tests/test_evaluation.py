import json

import numpy as np
import pytest
from conftest import random_dataset, random_state_for

from mmrnn.baselines import preset
from mmrnn.data import split_holdout_last
from mmrnn.estimator import MMRNN
from mmrnn.evaluation import (
    BUCKET_HEADER,
    EvalReport,
    LagBucket,
    emit_report,
    evaluate_holdout,
    kappa_sweep,
    lag_buckets,
    prediction_errors,
    read_bucket_csv,
)


def test_uniform_vs_one_hot_basic():
    err = prediction_errors("basic", np.full((1, 4), 0.25), np.array([[0.0, 5.0, 0.0, 0.0]]))
    assert err[0] == pytest.approx(0.75, abs=1e-15)


def test_topic_error_divides_by_V():
    err = prediction_errors("topic", np.array([[1.0, 1.0]]), np.array([[3.0, 1.0]]))
    assert err[0] == 2.0


def test_perfect_prediction_zero_error(rng):
    y = rng.integers(1, 5, size=(3, 4)).astype(float)
    assert np.all(prediction_errors("topic", y, y) == 0)
    assert np.all(prediction_errors("basic", y / y.sum(1, keepdims=True), y) == 0)


def _corpus(rng, D=8):
    return split_holdout_last(random_dataset(rng, D=D, T_range=(2, 6), V=5))


@pytest.mark.parametrize("mode", ["basic", "topic"])
def test_report_aggregates(rng, mode):
    train, hold, _ = _corpus(rng)
    st = random_state_for(rng, train, mode=mode)
    rep = evaluate_holdout(st, train, hold)
    assert rep.n == len(hold) and np.all(rep.errors >= 0)
    # brute-force overall mean
    assert rep.overall_mean == pytest.approx(sum(rep.errors.tolist()) / len(hold), rel=1e-14)
    assert sum(b.count for b in rep.buckets) == rep.n
    recombined = sum(b.count * b.mean_error for b in rep.buckets) / rep.n
    assert recombined == pytest.approx(rep.overall_mean, rel=1e-13)


def test_evaluate_does_not_mutate(rng):
    train, hold, _ = _corpus(rng)
    st = random_state_for(rng, train, mode="topic")
    before = {k: st.params[k].tobytes() for k in st.params}
    B = st.B.tobytes()
    evaluate_holdout(st, train, hold)
    assert all(st.params[k].tobytes() == v for k, v in before.items())
    assert st.B.tobytes() == B


def test_holdout_prediction_uses_history(rng):
    """The held-out step equals the last step of a forward pass over the full sequence."""
    from mmrnn.model import forward_sequence

    ds = random_dataset(rng, D=3, T_range=(2, 5), V=4)
    train, hold, _ = split_holdout_last(ds)
    st = random_state_for(rng, train, mode="topic")
    rep = evaluate_holdout(st, train, hold)
    for i, s in enumerate(ds.sequences):
        yhat = forward_sequence(st, s)[-1].yhat
        assert rep.errors[i] == pytest.approx(np.sum((s.counts[-1] - yhat) ** 2) / ds.V, rel=1e-13)


def test_lag_buckets_by_day():
    b = lag_buckets([1.0, 3.0, 5.0], [2.0, 2.0, 30.0])
    assert [x.delta_t for x in b] == [2, 30]
    assert b[0] == LagBucket(2, 2, 2.0, 1.0)


def test_csv_round_trip_and_agreement(tmp_path, rng):
    train, hold, _ = _corpus(rng, D=10)
    rep = evaluate_holdout(random_state_for(rng, train), train, hold)
    csv_path = emit_report(rep, tmp_path / "b.csv", "csv")
    json_path = emit_report(rep, tmp_path / "r.json", "json")
    assert csv_path.read_text().splitlines()[0] == ",".join(BUCKET_HEADER)
    back = read_bucket_csv(csv_path)
    assert back == rep.buckets  # exact: 17 significant digits
    as_json = json.loads(json_path.read_text())
    assert [LagBucket(**b) for b in as_json["buckets"]] == back
    assert as_json["overall_mean"] == rep.overall_mean


def test_empty_report_header_only(tmp_path):
    rep = EvalReport("basic", [], np.zeros(0), np.zeros(0), [])
    p = emit_report(rep, tmp_path / "empty.csv", "csv")
    assert p.read_text() == ",".join(BUCKET_HEADER) + "\n"
    assert json.loads(emit_report(rep, tmp_path / "e.json").read_text())["overall_mean"] is None


SMALL = dict(mode="topic", n_topics=2, hidden_dim=3, epochs=2)


def test_sweep_single_cell_matches_standalone(rng):
    train, hold, _ = _corpus(rng)
    res = kappa_sweep(train, hold, [(1.0, 0.3)], [4], SMALL)
    solo = MMRNN(**SMALL, kappa=0.3, random_state=4).fit(train).evaluate(hold).overall_mean
    assert len(res.cells) == 1 and res.cells[0].mean_error == solo


def test_sweep_kappa_zero_equals_lstm_preset(rng):
    train, hold, _ = _corpus(rng)
    res = kappa_sweep(train, hold, [(1.0, 0.0)], [1], SMALL)
    lstm = MMRNN(**SMALL, baseline="lstm", kappa=0.7, random_state=1).fit(train).evaluate(hold)
    assert res.cells[0].mean_error == lstm.overall_mean
    assert preset("vanilla_lstm", MMRNN(**SMALL).model_config(5)).decay.kappa == 0.0


def test_sweep_deterministic_and_summary(rng, tmp_path):
    train, hold, _ = _corpus(rng)
    grid = [(1.0, 0.0), (10.0, 1.0)]
    a = kappa_sweep(train, hold, grid, 3, SMALL)
    b = kappa_sweep(train, hold, grid, 3, SMALL)
    assert [c.mean_error for c in a.cells] == [c.mean_error for c in b.cells]
    assert {c.seed for c in a.cells} == {0, 1, 2}
    errs = [c.mean_error for c in a.cells_for(10.0, 1.0)]
    assert a.median(10.0, 1.0) == float(np.median(errs))
    text = emit_report(a, tmp_path / "s.csv", "csv").read_text().splitlines()
    assert text[0] == "t0,kappa,seed,mean_error" and len(text) == 7


def test_sweep_records_divergence(rng):
    train, hold, _ = _corpus(rng)
    with np.errstate(all="ignore"):
        res = kappa_sweep(train, hold, [(1.0, 0.1)], 1, dict(SMALL, lr=1e300))
    assert res.cells[0].error is not None
    assert np.isnan(res.cells[0].mean_error)
    assert res.summary()[(1.0, 0.1)]["n"] == 0
