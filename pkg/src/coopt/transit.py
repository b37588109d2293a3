"""Transit fleet: batteries, off-schedules, charging stations and travel times.

Periods are 1-based in every user-facing structure (fleet JSON, findings),
and time is cyclic: an off-schedule such as ``[21, 14]`` wraps midnight and
is stored as the ordered tuple ``(21, 22, 23, 24, 1, ..., 14)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "TransitBus",
    "StationMap",
    "TransitFleet",
    "Finding",
    "FleetError",
    "NegativeTravelTime",
    "off_schedule_from_pair",
    "travel_steps_from_minutes",
    "validate_fleet",
    "load_fleet_json",
    "bundled_fleet_path",
]


class FleetError(ValueError):
    pass


class NegativeTravelTime(FleetError):
    pass


def off_schedule_from_pair(start: int, end: int, periods: int) -> tuple[int, ...]:
    """Contiguous block from ``start`` to ``end`` inclusive, wrapping past ``periods``."""
    if not (1 <= start <= periods and 1 <= end <= periods):
        raise FleetError(f"off-schedule [{start}, {end}] outside periods 1..{periods}")
    length = (end - start) % periods + 1
    return tuple((start - 1 + k) % periods + 1 for k in range(length))


@dataclass(frozen=True)
class TransitBus:
    id: str
    battery_min: float  # MWh
    battery_max: float  # MWh
    initial_level: float  # MWh at the first off-schedule period
    charge_rate_max: float  # MW
    discharge_rate_max: float  # MW
    efficiency: float
    traverse_consumption: float  # MWh per period spent relocating
    off_schedule: tuple[int, ...]  # ordered periods, first is T1, last is T2

    def __post_init__(self):
        if not 0 <= self.battery_min <= self.initial_level <= self.battery_max:
            raise FleetError(
                f"bus {self.id}: need 0 <= battery_min <= initial_level <= battery_max, "
                f"got {self.battery_min}, {self.initial_level}, {self.battery_max}"
            )
        if not 0 < self.efficiency <= 1:
            raise FleetError(f"bus {self.id}: efficiency must be in (0, 1]")
        if not self.off_schedule:
            raise FleetError(f"bus {self.id}: empty off-schedule")
        if len(set(self.off_schedule)) != len(self.off_schedule):
            raise FleetError(f"bus {self.id}: off-schedule repeats a period")
        if min(self.charge_rate_max, self.discharge_rate_max, self.traverse_consumption) < 0:
            raise FleetError(f"bus {self.id}: rates and consumption must be non-negative")

    @property
    def first_period(self) -> int:
        return self.off_schedule[0]

    @property
    def last_period(self) -> int:
        return self.off_schedule[-1]

    def scaled(self, capacity: float, scale_rates: bool = False) -> TransitBus:
        """Copy with ``battery_max = capacity``; other levels keep their ratios."""
        k = capacity / self.battery_max if self.battery_max > 0 else 0.0
        rates = {}
        if scale_rates:
            rates = dict(charge_rate_max=self.charge_rate_max * k, discharge_rate_max=self.discharge_rate_max * k)
        return replace(
            self,
            battery_min=self.battery_min * k,
            battery_max=capacity,
            initial_level=self.initial_level * k,
            **rates,
        )


@dataclass(frozen=True, eq=False)
class StationMap:
    stations: tuple[int, ...]  # network node ids, depot first
    travel_steps: np.ndarray  # periods, [station, station]
    capacity: tuple[int, ...] | None = None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StationMap):
            return NotImplemented
        return (self.stations == other.stations and self.capacity == other.capacity
                and np.array_equal(self.travel_steps, other.travel_steps))

    def __hash__(self) -> int:
        return hash((self.stations, self.capacity, self.travel_steps.tobytes()))

    def __post_init__(self):
        steps = np.asarray(self.travel_steps, dtype=int)
        object.__setattr__(self, "travel_steps", steps)
        steps.setflags(write=False)
        n = len(self.stations)
        if n == 0:
            raise FleetError("at least one charging station (the depot) is required")
        if len(set(self.stations)) != n:
            raise FleetError("duplicate station node")
        if steps.shape != (n, n):
            raise FleetError(f"travel matrix shape {steps.shape} does not match {n} stations")
        if np.any(np.diag(steps) != 0):
            raise FleetError("travel matrix diagonal must be zero")
        off = ~np.eye(n, dtype=bool)
        if np.any(steps[off] < 1):
            raise FleetError("travel steps between distinct stations must be >= 1")
        if self.capacity is not None and len(self.capacity) != n:
            raise FleetError("one capacity per station required")

    @property
    def depot(self) -> int:
        return self.stations[0]


@dataclass(frozen=True)
class TransitFleet:
    buses: tuple[TransitBus, ...]
    station_map: StationMap

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise FleetError("bus ids must be unique")

    @property
    def stations(self) -> tuple[int, ...]:
        return self.station_map.stations

    def with_capacity(self, capacity: float, scale_rates: bool = False) -> TransitFleet:
        return replace(self, buses=tuple(b.scaled(capacity, scale_rates) for b in self.buses))

    def with_buses(self, **changes) -> TransitFleet:
        return replace(self, buses=tuple(replace(b, **changes) for b in self.buses))


def travel_steps_from_minutes(minutes, period_hours: float = 1.0) -> np.ndarray:
    """Discretize travel minutes to whole periods: ``ceil(min / period)``, at least 1 off-diagonal."""
    m = np.asarray(minutes, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise FleetError("travel-time matrix must be square")
    if np.any(m < 0):
        raise NegativeTravelTime("negative travel time")
    if np.any(np.diag(m) != 0):
        raise FleetError("travel-time matrix diagonal must be zero")
    steps = np.ceil(m / (60.0 * period_hours)).astype(int)
    off = ~np.eye(m.shape[0], dtype=bool)
    steps[off] = np.maximum(steps[off], 1)
    return steps


@dataclass(frozen=True)
class Finding:
    severity: str  # "error" or "warning"
    code: str
    message: str
    bus: str | None = None


def validate_fleet(fleet: TransitFleet, net) -> list[Finding]:
    """Report schedule and data problems that make the co-optimization infeasible.

    ``recharge_infeasible`` is raised exactly when
    ``e1 + eta * rate * dt * |off-schedule| < battery_max``.
    """
    findings = []
    T = net.periods
    dt = net.period_hours
    for node in fleet.stations:
        if not net.has_node(node):
            findings.append(Finding("error", "unknown_station", f"station node {node} not in network"))
    steps = fleet.station_map.travel_steps
    if not np.array_equal(steps, steps.T):
        findings.append(Finding("warning", "asymmetric_travel", "travel-step matrix is asymmetric"))
    for bus in fleet.buses:
        if any(not 1 <= t <= T for t in bus.off_schedule):
            findings.append(
                Finding("error", "schedule_out_of_range", f"off-schedule outside periods 1..{T}", bus.id)
            )
            continue
        reach = bus.initial_level + bus.efficiency * bus.charge_rate_max * dt * len(bus.off_schedule)
        if reach < bus.battery_max and not math.isclose(reach, bus.battery_max, rel_tol=1e-12, abs_tol=1e-12):
            findings.append(
                Finding(
                    "error",
                    "recharge_infeasible",
                    f"can reach at most {reach:.6g} MWh before service, needs {bus.battery_max:.6g}",
                    bus.id,
                )
            )
    return findings


def load_fleet_json(path: str | Path, periods: int = 24, period_hours: float = 1.0) -> TransitFleet:
    """Load a fleet file: ``buses`` (off_schedule as ``[start, end]``), ``stations``,
    ``travel_minutes`` and optional ``capacities``."""
    data = json.loads(Path(path).read_text())
    return fleet_from_dict(data, periods, period_hours)


def fleet_from_dict(data: dict, periods: int = 24, period_hours: float = 1.0) -> TransitFleet:
    try:
        buses = []
        for b in data["buses"]:
            start, end = b["off_schedule"]
            buses.append(
                TransitBus(
                    id=str(b["id"]),
                    battery_min=float(b["battery_min"]),
                    battery_max=float(b["battery_max"]),
                    initial_level=float(b["initial_level"]),
                    charge_rate_max=float(b["charge_rate_max"]),
                    discharge_rate_max=float(b["discharge_rate_max"]),
                    efficiency=float(b["efficiency"]),
                    traverse_consumption=float(b["traverse_consumption"]),
                    off_schedule=off_schedule_from_pair(int(start), int(end), periods),
                )
            )
        stations = tuple(int(s) for s in data["stations"])
        steps = travel_steps_from_minutes(data["travel_minutes"], period_hours)
        caps = data.get("capacities")
        smap = StationMap(stations, steps, tuple(int(c) for c in caps) if caps is not None else None)
    except (KeyError, TypeError) as exc:
        raise FleetError(f"malformed fleet data: {exc!r}") from exc
    return TransitFleet(tuple(buses), smap)


def fleet_to_dict(fleet: TransitFleet, travel_minutes=None) -> dict:
    steps = fleet.station_map.travel_steps
    return {
        "buses": [
            {
                "id": b.id,
                "battery_min": b.battery_min,
                "battery_max": b.battery_max,
                "initial_level": b.initial_level,
                "charge_rate_max": b.charge_rate_max,
                "discharge_rate_max": b.discharge_rate_max,
                "efficiency": b.efficiency,
                "traverse_consumption": b.traverse_consumption,
                "off_schedule": [b.first_period, b.last_period],
            }
            for b in fleet.buses
        ],
        "stations": list(fleet.stations),
        "travel_minutes": (np.asarray(travel_minutes) if travel_minutes is not None else steps * 60).tolist(),
        **({"capacities": list(fleet.station_map.capacity)} if fleet.station_map.capacity else {}),
    }


def bundled_fleet_path() -> Path:
    return Path(__file__).parent / "data" / "fleet_vta.json"
