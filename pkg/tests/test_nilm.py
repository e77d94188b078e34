import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridguard.errors import EmptyHistory, UsageError
from gridguard.metrics import confusion
from gridguard.nilm import (ApplianceModel, DisaggResult, detect_edges, disaggregate_cyclic, runs,
                            signature_deviation, write_result)
from gridguard.synthgrid import refrigerator_trace

RATED = 0.15
MODEL = ApplianceModel(RATED)


def square(n=200, on=6, off=10):
    state = (np.arange(n) % (on + off)) < on
    return RATED * state, state


def test_clean_square_wave_is_exact():
    agg, truth = square()
    r = disaggregate_cyclic(agg, MODEL)
    assert np.array_equal(r.state, truth)
    assert not r.residual.any()
    assert np.array_equal(r.appliance_power, RATED * r.state)


def test_square_wave_starting_on():
    agg, truth = square()
    r = disaggregate_cyclic(agg[3:], MODEL)
    assert np.array_equal(r.state, truth[3:])


def test_constant_and_empty():
    r = disaggregate_cyclic(np.full(50, 0.8), MODEL)
    assert not r.state.any() and not r.appliance_power.any()
    assert len(disaggregate_cyclic([], MODEL)) == 0


def test_noisy_trace_with_baseline():
    p, truth = refrigerator_trace(2880, RATED, seed=3)
    rng = np.random.default_rng(3)
    agg = p + 0.5 + rng.normal(0, 0.05 * RATED, size=p.size)
    r = disaggregate_cyclic(agg, MODEL)
    assert confusion(truth.astype(int), r.state.astype(int)).f1 >= 0.9


def test_validation():
    with pytest.raises(UsageError):
        disaggregate_cyclic([1.0, -0.1], MODEL)
    with pytest.raises(UsageError):
        disaggregate_cyclic([1.0, np.nan], MODEL)
    with pytest.raises(UsageError):
        ApplianceModel(0.0)
    with pytest.raises(UsageError):
        ApplianceModel(1.0, tolerance_frac=1.0)
    with pytest.raises(UsageError):
        ApplianceModel(1.0, min_on_duration=0)


def test_edges():
    e = detect_edges([0.0, 0.15, 0.15, 0.0, 0.3], MODEL)
    assert e.tolist() == [0, 1, 0, -1, 0]


def test_min_durations():
    agg = np.zeros(30)
    agg[5:6] = RATED  # 1-interval blip, dropped by min_on = 2
    agg[10:20] = RATED
    agg[14:15] = 0.0  # 1-interval dip, bridged by min_off = 2
    r = disaggregate_cyclic(agg, ApplianceModel(RATED, min_on_duration=2, min_off_duration=2))
    assert not r.state[5]
    assert r.state[10:20].all()
    inner = runs(r.state)[1:-1]
    assert all(n >= 2 for _, _, n in inner)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=2, max_size=80), st.integers(0, 64),
       st.integers(1, 4), st.integers(1, 4))
def test_baseline_invariance_and_identity(ticks, base, min_on, min_off):
    # eighths of a kW keep all arithmetic exact
    agg = np.array(ticks, float) / 8
    model = ApplianceModel(0.25, 0.25, min_on, min_off)
    a = disaggregate_cyclic(agg, model)
    b = disaggregate_cyclic(agg + base / 8, model)
    assert np.array_equal(a.state, b.state)
    assert np.array_equal(a.residual + a.appliance_power, agg)
    for value, _, n in runs(a.state)[1:-1]:
        assert n >= (min_on if value else min_off)


def test_signature_deviation():
    _, state = square(160, 8, 8)
    base = DisaggResult(np.zeros(160), state, RATED * state, np.zeros(160))
    assert signature_deviation(base, [base, base]) == 0.0
    always_on = DisaggResult(np.zeros(160), np.ones(160, bool), np.full(160, RATED), np.zeros(160))
    assert abs(always_on.duty_cycle - base.duty_cycle) == 0.5
    assert signature_deviation(always_on, [base]) >= 0.5
    never = DisaggResult(np.zeros(4), np.zeros(4, bool), np.zeros(4), np.zeros(4))
    assert signature_deviation(never, [always_on]) >= 0
    assert signature_deviation(base, [never]) == pytest.approx(0.5 + 8.0)
    with pytest.raises(EmptyHistory):
        signature_deviation(base, [])


def test_write_result(tmp_path):
    agg, _ = square(40)
    write_result(disaggregate_cyclic(agg, MODEL), tmp_path / "n.csv")
    header = (tmp_path / "n.csv").read_text().splitlines()[0]
    assert header == "index,aggregate,state,appliance_power,residual"
