import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _fixtures import fleet, network
from coopt.transit import (
    FleetError,
    NegativeTravelTime,
    StationMap,
    TransitBus,
    TransitFleet,
    bundled_fleet_path,
    fleet_from_dict,
    fleet_to_dict,
    load_fleet_json,
    off_schedule_from_pair,
    travel_steps_from_minutes,
    validate_fleet,
)


def one_bus(**kw) -> TransitFleet:
    args = dict(id="b", battery_min=0.0, battery_max=2.0, initial_level=2.0, charge_rate_max=1.0,
                discharge_rate_max=1.0, efficiency=1.0, traverse_consumption=0.0, off_schedule=(1, 2, 3, 4))
    args.update(kw)
    return TransitFleet((TransitBus(**args),), StationMap((2,), np.zeros((1, 1), dtype=int)))


def test_ceil_travel_steps():
    assert travel_steps_from_minutes([[0, 59], [59, 0]]).tolist() == [[0, 1], [1, 0]]
    assert travel_steps_from_minutes([[0, 61], [61, 0]]).tolist() == [[0, 2], [2, 0]]
    assert travel_steps_from_minutes([[0, 0.5], [0.5, 0]]).tolist() == [[0, 1], [1, 0]]


def test_travel_steps_elementwise_oracle():
    data = json.loads(bundled_fleet_path().read_text())
    mins = data["travel_minutes"]
    steps = travel_steps_from_minutes(mins, 0.5)
    for i, row in enumerate(mins):
        for j, m in enumerate(row):
            expect = 0 if i == j else max(1, math.ceil(m / 30.0))
            assert steps[i, j] == expect


def test_negative_travel_time():
    with pytest.raises(NegativeTravelTime):
        travel_steps_from_minutes([[0, -1], [1, 0]])


def test_off_schedule_wraps_midnight():
    assert off_schedule_from_pair(21, 3, 24) == (21, 22, 23, 24, 1, 2, 3)
    assert off_schedule_from_pair(5, 5, 24) == (5,)
    with pytest.raises(FleetError):
        off_schedule_from_pair(0, 3, 24)


def test_bundled_fleet_shape():
    fl = fleet()
    assert len(fl.buses) == 4
    assert fl.stations == (1, 2, 3, 4, 5, 6)
    assert fl.station_map.depot == 1
    assert [b.off_schedule[0] for b in fl.buses] == [21] * 4
    assert [b.off_schedule[-1] for b in fl.buses] == [13, 14, 12, 15]


def test_full_battery_no_findings():
    assert validate_fleet(one_bus(), network("case9")) == []


def test_recharge_bound_violation():
    fl = one_bus(initial_level=0.0, off_schedule=(1,))
    found = validate_fleet(fl, network("case9"))
    assert [f.code for f in found] == ["recharge_infeasible"]
    assert found[0].bus == "b" and found[0].severity == "error"


def test_bundled_fleet_validates_on_case9():
    assert validate_fleet(fleet(), network("case9")) == []


def test_unknown_station():
    fl = TransitFleet(one_bus().buses, StationMap((99,), np.zeros((1, 1), dtype=int)))
    assert "unknown_station" in [f.code for f in validate_fleet(fl, network("case9"))]


def test_asymmetric_travel_is_a_warning():
    fl = TransitFleet(one_bus().buses, StationMap((1, 2), np.array([[0, 1], [2, 0]])))
    found = validate_fleet(fl, network("case9"))
    assert [(f.severity, f.code) for f in found] == [("warning", "asymmetric_travel")]


@pytest.mark.parametrize(
    "kw",
    [dict(initial_level=3.0), dict(efficiency=0.0), dict(off_schedule=()), dict(off_schedule=(1, 1)),
     dict(charge_rate_max=-1.0)],
)
def test_bus_invariants(kw):
    with pytest.raises(FleetError):
        one_bus(**kw)


def test_station_map_invariants():
    with pytest.raises(FleetError):
        StationMap((1, 1), np.array([[0, 1], [1, 0]]))
    with pytest.raises(FleetError):
        StationMap((1, 2), np.array([[0, 0], [1, 0]]))
    with pytest.raises(FleetError):
        StationMap((), np.zeros((0, 0)))


def test_json_round_trip(tmp_path):
    fl = fleet()
    data = fleet_to_dict(fl, json.loads(bundled_fleet_path().read_text())["travel_minutes"])
    p = tmp_path / "f.json"
    p.write_text(json.dumps(data))
    assert load_fleet_json(p) == fl


def test_malformed_fleet_dict():
    with pytest.raises(FleetError):
        fleet_from_dict({"buses": [{"id": 1}], "stations": [1], "travel_minutes": [[0]]})


def test_capacity_scaling():
    b = fleet().with_capacity(6.6).buses[0]
    assert b.battery_max == 6.6
    assert b.initial_level == pytest.approx(2.0)
    assert b.charge_rate_max == 0.125
    assert fleet().with_capacity(6.6, scale_rates=True).buses[0].charge_rate_max == pytest.approx(1.25)


@settings(max_examples=200, deadline=None)
@given(
    e1=st.floats(0, 5), emax_extra=st.floats(0, 5), rate=st.floats(0, 3), eta=st.floats(0.05, 1.0),
    n=st.integers(1, 24), dt=st.sampled_from([0.25, 0.5, 1.0]),
)
def test_validate_flags_exactly_the_bound(e1, emax_extra, rate, eta, n, dt):
    emax = e1 + emax_extra
    fl = one_bus(initial_level=e1, battery_max=emax, charge_rate_max=rate, efficiency=eta,
                 off_schedule=tuple(range(1, n + 1)))

    class Horizon:
        periods = 24
        period_hours = dt

        @staticmethod
        def has_node(node):
            return 1 <= node <= 9

    flagged = any(f.code == "recharge_infeasible" for f in validate_fleet(fl, Horizon))
    reach = e1 + eta * rate * dt * n
    if math.isclose(reach, emax, rel_tol=1e-12, abs_tol=1e-12):
        assert not flagged
    else:
        assert flagged == (reach < emax)
