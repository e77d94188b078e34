import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridguard.errors import EmptySeries, MissingChannel
from gridguard.features import (FRAME_COLUMNS, apparent_power, build_frame, environmental_features, imbalance,
                                loss_percentage, read_frames, rolling_stats, total_supply, write_frames)
from gridguard.synthgrid import generate_topology, inject_theft, ScenarioConfig, simulate_telemetry


def brute_rolling(x, w):
    mean = np.empty(len(x))
    std = np.empty(len(x))
    for i in range(len(x)):
        seg = x[max(0, i - w + 1):i + 1]
        mean[i] = seg.mean()
        std[i] = seg.std()
    return mean, std


def test_supply_demand_loss_examples():
    assert total_supply(10, 0, 0) == 10
    assert total_supply(10, 2, 3) == 15
    assert total_supply(0, 0, 0) == 0
    assert imbalance(15, 15) == 0 and imbalance(15, 12) == 3 and imbalance(12, 15) == -3
    assert loss_percentage(100, 90) == pytest.approx(0.10)
    assert loss_percentage(100, 100) == 0
    assert loss_percentage(0, 0) == 0


def test_apparent_power_examples_and_symmetry():
    assert apparent_power(3, 4) == 5
    assert apparent_power(7, 0) == 7
    assert apparent_power(0, 0) == 0
    assert apparent_power(-3.5, 1.25) == apparent_power(3.5, 1.25) == apparent_power(1.25, 3.5)


def test_environmental_examples():
    t, h, p = environmental_features(2.0, 20.0, 50.0, 0.3)
    assert t == 2.0 and h == 1.0 and p == pytest.approx(0.6)
    assert environmental_features(0.0, 35.0, 80.0, 0.2) == (0.0, 0.0, 0.0)


def test_rolling_examples():
    m, s = rolling_stats([5, 5, 5, 5], 4)
    assert np.array_equal(m, [5, 5, 5, 5]) and np.array_equal(s, [0, 0, 0, 0])
    m, _ = rolling_stats([1, 2, 3, 4], 2)
    assert np.allclose(m, [1, 1.5, 2.5, 3.5])
    _, s = rolling_stats(np.random.default_rng(0).normal(size=50), 1)
    assert not s.any()
    with pytest.raises(EmptySeries):
        rolling_stats([], 3)


@pytest.mark.parametrize("w", [4, 24, 96])
def test_rolling_matches_brute_force(w):
    x = np.random.default_rng(w).gamma(2.0, 1.5, size=1000)
    m, s = rolling_stats(x, w)
    bm, bs = brute_rolling(x, w)
    assert np.abs(m - bm).max() < 1e-9
    assert np.abs(s - bs).max() < 1e-9


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=80), st.integers(1, 30),
       st.floats(-100, 100))
def test_rolling_shift_property(xs, w, c):
    x = np.array(xs)
    m, s = rolling_stats(x, w)
    m2, s2 = rolling_stats(x + c, w)
    assert np.allclose(m2, m + c, atol=1e-9)
    assert np.allclose(s2, s, atol=1e-6)
    assert (s >= 0).all()


@pytest.fixture(scope="module")
def corpus():
    topo = generate_topology(2, 4, 3)
    tel = simulate_telemetry(topo, 7, 3)
    tel, _ = inject_theft(tel, ScenarioConfig(seed=3))
    return tel


def test_build_frame_shape_and_finiteness(corpus):
    for m, s in corpus.items():
        f = build_frame(s)
        assert len(f) == len(s)
        assert list(f.columns) == list(FRAME_COLUMNS)
        assert all(np.isfinite(v).all() for v in f.columns.values())
        assert (f["apparent_power_kva"] >= np.abs(f["power_kw"])).all()


def test_build_frame_requires_channels(corpus):
    s = next(iter(corpus.values())).copy()
    del s.channels["humidity_pct"]
    with pytest.raises(MissingChannel):
        build_frame(s)


def test_frame_csv_round_trip(corpus, tmp_path):
    frames = {m: build_frame(s) for m, s in corpus.items()}
    write_frames(frames, tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_text().startswith("# gridguard-features v1\n")
    back = read_frames(tmp_path / "f.csv")
    for m in frames:
        for c in FRAME_COLUMNS:
            assert np.array_equal(back[m][c], frames[m][c])
