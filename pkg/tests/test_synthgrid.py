import numpy as np
import pytest

from gridguard.errors import InfeasiblePrevalence, UsageError
from gridguard.features import loss_percentage
from gridguard.synthgrid import (GridTopology, ScenarioConfig, TheftGroundTruth, _tap_bursts, add_appliance,
                                 generate_topology, inject_theft, refrigerator_trace, simulate_telemetry)


@pytest.fixture(scope="module")
def week():
    topo = generate_topology(10, 10, 11)
    clean = simulate_telemetry(topo, 7, 11)
    dirty, gt = inject_theft(clean, ScenarioConfig(seed=11))
    return topo, clean, dirty, gt


def test_topology_counts_and_degrees():
    t = generate_topology(1, 3, 0)
    assert (len(t.transformers), len(t.meters), len(t.edges)) == (1, 3, 3)
    t = generate_topology(2, 2, 5)
    assert all(len(t.meters_of(x)) == 2 for x in t.transformers)
    assert sorted(t.transformer_of()) == sorted(t.meters)
    assert generate_topology(4, 3, 9) == generate_topology(4, 3, 9)
    assert GridTopology.from_dict(t.to_dict()) == t


def test_topology_validation():
    with pytest.raises(UsageError):
        GridTopology(["T0"], ["M0", "M1"], [("T0", "M0")])
    with pytest.raises(UsageError):
        generate_topology(0, 3)


def test_telemetry_shape_and_physics(week):
    topo, clean, _, _ = week
    s = clean[topo.meters[0]]
    assert len(s) == 7 * 96
    hours = (s.epoch_seconds() % 86400) // 3600
    for m, s in clean.items():
        ch = s.channels
        assert (ch["power_kw"] >= 0).all()
        assert (ch["solar_kw"][hours == 0] == 0).all()
        pf = ch["power_factor"]
        assert ((pf >= 0.88) & (pf <= 0.99)).all()
        loss = loss_percentage(ch["grid_supply_kw"], ch["power_kw"]).mean()
        assert 0 < loss < 0.08


def test_telemetry_deterministic():
    topo = generate_topology(1, 2, 3)
    a = simulate_telemetry(topo, 2, 3)
    b = simulate_telemetry(topo, 2, 3)
    for m in a:
        for c in a[m].channels:
            assert np.array_equal(a[m].channels[c], b[m].channels[c])


def test_injection_invariants(week):
    _, clean, dirty, gt = week
    for m in clean:
        flag = gt.flags[m].astype(bool)
        assert ((gt.scenarios[m] == "none") == ~flag).all()
        for c in clean[m].channels:
            assert np.array_equal(clean[m].channels[c][~flag], dirty[m].channels[c][~flag])
        assert (dirty[m].channels["grid_supply_kw"] >= clean[m].channels["grid_supply_kw"]).all()
        bypass = gt.scenarios[m] == "bypass"
        if bypass.any():
            before = loss_percentage(clean[m].channels["grid_supply_kw"], clean[m].channels["power_kw"])
            after = loss_percentage(dirty[m].channels["grid_supply_kw"], dirty[m].channels["power_kw"])
            assert (after[bypass] > before[bypass]).all()
        tap = gt.scenarios[m] == "intermittent_tap"
        assert (dirty[m].channels["power_factor"][tap] < 0.85).all()


def test_prevalence_on_100_meters(week):
    assert 0.168 <= week[3].prevalence() <= 0.208


def test_no_theft_is_noop(week):
    _, clean, _, _ = week
    out, gt = inject_theft(clean, ScenarioConfig(theft_meter_fraction=0.0, seed=1))
    assert gt.prevalence() == 0
    for m in clean:
        for c in clean[m].channels:
            assert np.array_equal(out[m].channels[c], clean[m].channels[c])


def test_injection_deterministic(week, tmp_path):
    _, clean, _, _ = week
    cfg = ScenarioConfig(seed=4)
    inject_theft(clean, cfg)[1].write_csv(tmp_path / "a.csv")
    inject_theft(clean, cfg)[1].write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    back = TheftGroundTruth.read_csv(tmp_path / "a.csv")
    assert back.prevalence() == inject_theft(clean, cfg)[1].prevalence()


def test_infeasible_prevalence(week):
    with pytest.raises(InfeasiblePrevalence):
        inject_theft(week[1], ScenarioConfig(theft_meter_fraction=0.05, target_point_prevalence=0.5, seed=0))


def test_scenario_config_validation():
    with pytest.raises(UsageError):
        ScenarioConfig(scenario_weights={"bypass": 0.5, "meter_zeroing": 0.4})
    with pytest.raises(UsageError):
        ScenarioConfig(target_point_prevalence=1.5)


@pytest.mark.parametrize("quota", [4, 30, 97, 300])
def test_tap_bursts_cover_quota_with_bounded_lengths(quota):
    bursts = _tap_bursts(np.random.default_rng(quota), 672, quota)
    assert sum(n for _, n in bursts) == quota
    assert all(4 <= n <= 24 for _, n in bursts) or quota < 4
    ends = [(s, s + n) for s, n in bursts]
    assert all(a[1] <= b[0] for a, b in zip(ends, ends[1:]))


def test_refrigerator_and_appliance(week):
    p, state = refrigerator_trace(500, 0.2, seed=1)
    assert np.array_equal(p, 0.2 * state)
    topo, clean, _, _ = week
    out, states = add_appliance(clean, 0.15, seed=2)
    m = topo.meters[0]
    delta = out[m].channels["power_kw"] - clean[m].channels["power_kw"]
    assert np.allclose(delta, 0.15 * states[m])
