import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridguard.detectors import (AnomalyScores, Autoencoder, CausalConv1D, DetectorConfig, DetectorSuite,
                                 LSTMForecaster, TCNForecaster, WindowDataset, ae_score, ae_train,
                                 calibrate_threshold, ensemble_vote, lstm_score, lstm_train, read_scores,
                                 scores_to_frame, tcn_score, tcn_train, windows_at)
from gridguard.errors import EmptyScores, LengthMismatch, NotTrained, UsageError
from gridguard.features import build_frame
from gridguard.labeler import RuleThresholds, label_arrays
from gridguard.numeric import grad_check
from gridguard.synthgrid import ScenarioConfig, generate_topology, inject_theft, simulate_telemetry


def _grad_err(model, X, y):
    _, grads = model.loss_and_grads(X, y)
    return grad_check(lambda: model.loss_and_grads(X, y, need_grads=False)[0], model.params, grads)


def test_lstm_gradients():
    rng = np.random.default_rng(0)
    m = LSTMForecaster(3, hidden=4, seed=1)
    assert _grad_err(m, rng.normal(size=(5, 6, 3)), rng.normal(size=5)) < 1e-3


def test_tcn_gradients():
    rng = np.random.default_rng(1)
    m = TCNForecaster(2, channels=3, kernel=3, dilations=(1, 2), seed=2)
    # shift biases so few relu inputs sit at the kink
    for k in m.params:
        if k.endswith(".b"):
            m.params[k][...] = 0.3
    assert _grad_err(m, rng.normal(size=(4, 8, 2)), rng.normal(size=4)) < 1e-3


def test_ae_gradients():
    rng = np.random.default_rng(2)
    m = Autoencoder(6, hidden=(5, 3), seed=3)
    X = rng.normal(size=(4, 3, 2))
    assert _grad_err(m, X, None) < 1e-3


def test_conv_example():
    conv = CausalConv1D(1, 1, 2, 1, np.random.default_rng(0))
    w0, w1 = 0.7, -1.3
    conv.W[...] = np.array([w0, w1]).reshape(2, 1, 1)
    x = np.array([2.0, 3.0, 5.0]).reshape(1, 3, 1)
    y = conv.forward(x)[0, :, 0]
    assert y[0] == pytest.approx(w0 * 2.0)
    assert y[2] == pytest.approx(w0 * 5.0 + w1 * 3.0)


@pytest.mark.parametrize("dilations", [(1,), (1, 2), (1, 2, 4, 8), (3, 5)])
def test_tcn_causality(dilations):
    rng = np.random.default_rng(4)
    m = TCNForecaster(2, channels=4, dilations=dilations, seed=0)
    x = rng.normal(size=(40, 2))
    base = m.forward_sequence(x)
    for t in (0, 10, 38):
        x2 = x.copy()
        x2[t + 1:] += rng.normal(size=x2[t + 1:].shape) * 5
        out = m.forward_sequence(x2)
        assert np.array_equal(out[:t + 1], base[:t + 1])


def test_tcn_receptive_field():
    assert TCNForecaster(3).receptive_field == 31


def test_perfect_prediction_scores_zero():
    m = LSTMForecaster(2, hidden=3)
    m.trained = True
    X = np.random.default_rng(0).normal(size=(4, 5, 2))
    assert not m.score(X, m.predict(X)).any()


def test_not_trained():
    X = np.zeros((1, 4, 2))
    for m in (LSTMForecaster(2), TCNForecaster(2)):
        with pytest.raises(NotTrained):
            m.score(X, np.zeros(1))
    with pytest.raises(NotTrained):
        Autoencoder(8).score(X)
    with pytest.raises(NotTrained):
        DetectorSuite().score_meter(None, [0])


def _sine_dataset(n=200, L=12):
    t = np.arange(n + L + 1)
    s = np.sin(2 * np.pi * t / 16)
    X = np.stack([s[i:i + L] for i in range(n)])[..., None]
    y = s[L:L + n]
    return WindowDataset(X, y, np.array(["M"] * n, dtype=object), np.arange(n))


def test_lstm_loss_trend_on_sine():
    model = lstm_train(_sine_dataset(), epochs=12, seed=0, hidden=8, batch_size=32, lr=1e-3)
    h = np.array(model.history)
    assert np.all(np.diff(h[2:]) <= 1e-12)
    assert h[-1] < h[0]


def test_training_is_deterministic():
    data = _sine_dataset(80)
    a = lstm_score(lstm_train(data, epochs=2, seed=5, hidden=4), data)
    b = lstm_score(lstm_train(data, epochs=2, seed=5, hidden=4), data)
    assert np.array_equal(a, b)
    t1 = tcn_score(tcn_train(data, epochs=2, seed=5), data)
    t2 = tcn_score(tcn_train(data, epochs=2, seed=5), data)
    assert np.array_equal(t1, t2)


def test_ae_constant_vs_spike():
    X = np.full((64, 8, 1), 0.5)
    data = WindowDataset(X, np.zeros(64), np.array(["M"] * 64, dtype=object), np.arange(64))
    model = ae_train(data, epochs=30, seed=0, lr=1e-2)
    spike = np.full((1, 8, 1), 0.5)
    spike[0, 4, 0] = 4.0
    known = ae_score(model, WindowDataset(X[:1], np.zeros(1), data.meter_ids[:1], np.arange(1)))
    unseen = ae_score(model, WindowDataset(spike, np.zeros(1), data.meter_ids[:1], np.arange(1)))
    assert 0 <= known[0] < unseen[0]


def test_calibrate_threshold():
    scores = np.arange(1, 101, dtype=float)
    tau = calibrate_threshold(scores, 0.95)
    # sorting oracle: rank position (n - 1) q between the 95th and 96th order statistics
    pos = (len(scores) - 1) * 0.95
    lo = int(np.floor(pos))
    assert tau == pytest.approx(scores[lo] + (pos - lo) * (scores[lo + 1] - scores[lo]))
    assert tau == pytest.approx(95.05)
    assert calibrate_threshold(np.full(10, 3.0)) == 3.0
    assert not (np.full(10, 3.0) > 3.0).any()
    assert calibrate_threshold(scores, 1.0) == 100.0
    with pytest.raises(EmptyScores):
        calibrate_threshold([])


def test_vote_truth_table():
    for a, b, c in itertools.product([0, 1], repeat=3):
        assert ensemble_vote([a], [b], [c])[0] == int(a + b + c >= 2)
    with pytest.raises(LengthMismatch):
        ensemble_vote([1, 0], [1], [0, 1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans(), st.booleans()), min_size=1, max_size=50))
def test_vote_properties(rows):
    a, b, c = (np.array(x, dtype=int) for x in zip(*rows))
    e = ensemble_vote(a, b, c).astype(bool)
    assert not (e & ~(a | b | c).astype(bool)).any()
    for x, y in ((a, b), (a, c), (b, c)):
        assert not ((x & y).astype(bool) & ~e).any()
    assert np.array_equal(e, ensemble_vote(c, a, b).astype(bool))
    # a majority row always has at least one agreeing pair, so the pairwise totals bound the count
    assert e.sum() <= (a & b).sum() + (a & c).sum() + (b & c).sum()


def test_windows_never_cross_start():
    m = np.arange(20.0).reshape(10, 2)
    w = windows_at(m, [3, 9], 4)
    assert w.shape == (2, 4, 2) and np.array_equal(w[0], m[0:4])
    with pytest.raises(UsageError):
        windows_at(m, [2], 4)


@pytest.fixture(scope="module")
def suite_run():
    topo = generate_topology(1, 3, 8)
    tel, _ = inject_theft(simulate_telemetry(topo, 6, 8), ScenarioConfig(seed=8))
    frames = {m: build_frame(s) for m, s in tel.items()}
    labels = {m: label_arrays(f, 230.0, RuleThresholds())[0] for m, f in frames.items()}
    cfg = DetectorConfig(window=16, hidden=4, tcn_channels=4, epochs=1, max_train_windows=200,
                         calibration_windows=300)
    stop = {m: 400 for m in frames}
    suite = DetectorSuite(cfg, seed=3).fit(frames, labels, stop)
    index = {m: np.arange(400, len(frames[m])) for m in frames}
    return frames, suite, suite.score(frames, index), index


def test_suite_scores_and_invariants(suite_run):
    _, suite, scores, _ = suite_run
    for s in scores.values():
        assert isinstance(s, AnomalyScores)
        for v in (s.lstm_dev, s.tcn_dev, s.ae_err):
            assert (v >= 0).all()
        votes = s.flags["lstm"] + s.flags["tcn"] + s.flags["ae"]
        assert np.array_equal(s.ensemble == 1, votes >= 2)


def test_suite_checkpoint_and_csv(suite_run, tmp_path):
    frames, suite, scores, index = suite_run
    suite.save(tmp_path / "d.json")
    again = DetectorSuite.load(tmp_path / "d.json").score(frames, index)
    for m in scores:
        assert np.array_equal(again[m].lstm_dev, scores[m].lstm_dev)
        assert np.array_equal(again[m].ae_err, scores[m].ae_err)
    scores_to_frame(scores).to_csv(tmp_path / "s.csv", index=False)
    back = read_scores(tmp_path / "s.csv", suite.thresholds)
    for m in scores:
        assert np.array_equal(back[m].tcn_dev, scores[m].tcn_dev)
        assert np.array_equal(back[m].ensemble, scores[m].ensemble)
