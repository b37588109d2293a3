"""Multi-period DC network instances built from MATPOWER cases."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import matpower as mp

__all__ = [
    "Bus",
    "Branch",
    "Generator",
    "RenewableUnit",
    "NetworkInstance",
    "NetworkDefaults",
    "NetworkError",
    "ProfileLengthMismatch",
    "NonPositiveScale",
    "UnknownBus",
    "build_network",
    "attach_renewable",
    "load_profile_csv",
    "bundled_profile",
]


class NetworkError(ValueError):
    pass


class ProfileLengthMismatch(NetworkError):
    pass


class NonPositiveScale(NetworkError):
    pass


class UnknownBus(NetworkError):
    pass


@dataclass(frozen=True)
class Bus:
    id: int  # 1-based position; id 1 is the angle reference
    case_id: int
    base_demand: float


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    reactance: float
    flow_limit: float


@dataclass(frozen=True)
class Generator:
    bus: int
    p_max: float
    cost_lin: float
    cost_quad: float
    ramp_limit: float
    second_stage_ramp_up_cap: float
    second_stage_ramp_down_cap: float
    ramp_up_cost: float
    ramp_down_cost: float


@dataclass(frozen=True)
class RenewableUnit:
    bus: int
    p_max_committed: float
    cost_lin: float


@dataclass(frozen=True)
class NetworkDefaults:
    """Knobs applied when turning a raw case into a network instance.

    ``flow_limit_scale`` defaults to the demand scale, so line ratings shrink
    with the load. ``flow_limit_override`` replaces every rating outright.
    """

    period_hours: float = 1.0
    angle_limit: float = math.pi / 2
    ramp_fraction: float = 0.2
    reserve_fraction: float = 0.2
    ramp_up_mult: float = 1.2
    ramp_down_mult: float = 0.5
    shed_cost_mult: float = 10.0
    flow_limit_scale: float | None = None
    flow_limit_override: float | None = None


@dataclass(frozen=True)
class NetworkInstance:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    renewables: tuple[RenewableUnit, ...]
    demand: np.ndarray  # MW, [node, period]
    period_hours: float
    angle_limit: float
    shed_cost: np.ndarray  # $/MWh, [node, period]
    base_mva: float
    name: str = ""
    defaults: NetworkDefaults = field(default_factory=NetworkDefaults)

    def __post_init__(self):
        self.demand.setflags(write=False)
        self.shed_cost.setflags(write=False)
        if self.demand.shape[1] < 2:
            raise ProfileLengthMismatch("at least two periods are required")
        if np.any(self.demand < 0):
            raise NetworkError("negative demand")
        if not 0 < self.angle_limit <= math.pi:
            raise NetworkError(f"angle limit {self.angle_limit} outside (0, pi]")

    @property
    def n_nodes(self) -> int:
        return len(self.buses)

    @property
    def periods(self) -> int:
        return self.demand.shape[1]

    def has_node(self, node: int) -> bool:
        return 1 <= node <= len(self.buses)

    def with_demand(self, demand: np.ndarray) -> NetworkInstance:
        return replace(self, demand=np.array(demand, dtype=float))

    def with_flow_limit(self, limit: float) -> NetworkInstance:
        return replace(self, branches=tuple(replace(br, flow_limit=limit) for br in self.branches))

    def with_ramp_costs(self, up_mult: float, down_mult: float = 0.5) -> NetworkInstance:
        gens = tuple(
            replace(g, ramp_up_cost=up_mult * g.cost_lin, ramp_down_cost=down_mult * g.cost_lin)
            for g in self.generators
        )
        return replace(self, generators=gens)


def build_network(
    raw: mp.RawCase,
    profile,
    demand_scale: float = 1.0,
    defaults: NetworkDefaults | None = None,
) -> NetworkInstance:
    """Expand a single-snapshot case into a ``len(profile)``-period instance.

    ``demand[i, t] = PD_i * demand_scale * profile[t]``.
    """
    defaults = defaults or NetworkDefaults()
    profile = np.asarray(profile, dtype=float)
    if profile.ndim != 1 or profile.size < 2:
        raise ProfileLengthMismatch(f"profile must be a vector of length >= 2, got shape {profile.shape}")
    if np.any(profile < 0) or not np.all(np.isfinite(profile)):
        raise NetworkError("profile multipliers must be finite and non-negative")
    if not demand_scale > 0:
        raise NonPositiveScale(f"demand_scale must be positive, got {demand_scale}")

    case_ids = raw.bus_ids
    index = {int(cid): k + 1 for k, cid in enumerate(case_ids)}
    pd = raw.bus_rows[:, mp.PD]
    if np.any(pd < 0):
        raise NetworkError("case has negative bus demand")
    buses = tuple(Bus(k + 1, int(cid), float(pd[k])) for k, cid in enumerate(case_ids))

    flow_scale = defaults.flow_limit_scale if defaults.flow_limit_scale is not None else demand_scale
    branches = []
    for row in raw.branch_rows:
        if row[mp.BR_STATUS] == 0:
            continue
        rate = row[mp.RATE_A]
        limit = math.inf if rate == 0 else float(rate) * flow_scale
        if defaults.flow_limit_override is not None:
            limit = float(defaults.flow_limit_override)
        f, t = index[int(row[mp.F_BUS])], index[int(row[mp.T_BUS])]
        if f == t:
            raise NetworkError(f"branch {row[mp.F_BUS]:g}-{row[mp.T_BUS]:g} is a self-loop")
        if not row[mp.BR_X] > 0:
            raise NetworkError(f"branch {row[mp.F_BUS]:g}-{row[mp.T_BUS]:g} has non-positive reactance")
        branches.append(Branch(f, t, float(row[mp.BR_X]), limit))

    gens = []
    for row, cost in zip(raw.gen_rows, raw.gencost_rows):
        if row[mp.GEN_STATUS] == 0:
            continue
        n = int(cost[mp.NCOST])
        coeffs = list(cost[mp.COST : mp.COST + n])[::-1]  # c0, c1, c2
        coeffs += [0.0] * (3 - len(coeffs))
        pmax = max(float(row[mp.PMAX]), 0.0)
        lin = float(coeffs[1])
        gens.append(
            Generator(
                bus=index[int(row[mp.GEN_BUS])],
                p_max=pmax,
                cost_lin=lin,
                cost_quad=float(coeffs[2]),
                ramp_limit=pmax * defaults.ramp_fraction,
                second_stage_ramp_up_cap=pmax * defaults.reserve_fraction,
                second_stage_ramp_down_cap=pmax * defaults.reserve_fraction,
                ramp_up_cost=defaults.ramp_up_mult * lin,
                ramp_down_cost=defaults.ramp_down_mult * lin,
            )
        )
    if any(g.cost_quad < 0 for g in gens):
        raise NetworkError("negative quadratic generation cost makes the model non-convex")

    demand = np.outer(pd * demand_scale, profile)
    max_lin = max((g.cost_lin for g in gens), default=0.0)
    shed = np.full(demand.shape, defaults.shed_cost_mult * max_lin)
    return NetworkInstance(
        buses=buses,
        branches=tuple(branches),
        generators=tuple(gens),
        renewables=(),
        demand=demand,
        period_hours=defaults.period_hours,
        angle_limit=defaults.angle_limit,
        shed_cost=shed,
        base_mva=raw.base_mva,
        name=raw.case_name,
        defaults=defaults,
    )


def attach_renewable(
    net: NetworkInstance, bus: int, p_max: float, cost_lin: float | None = None
) -> NetworkInstance:
    """Return a copy of ``net`` with a renewable unit at node ``bus``.

    The unit is priced at the cheapest linear generation cost unless
    ``cost_lin`` is given.
    """
    if not net.has_node(bus):
        raise UnknownBus(f"node {bus} not in network with {net.n_nodes} nodes")
    if p_max < 0:
        raise NetworkError("renewable capacity must be non-negative")
    if cost_lin is None:
        cost_lin = min((g.cost_lin for g in net.generators), default=0.0)
    unit = RenewableUnit(bus=bus, p_max_committed=float(p_max), cost_lin=float(cost_lin))
    return replace(net, renewables=net.renewables + (unit,))


def load_profile_csv(path: str | Path, column: str = "multiplier", normalize: bool = False) -> np.ndarray:
    """Read a ``period,<column>`` CSV into a vector ordered by period."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or column not in rows[0]:
        raise NetworkError(f"{path}: expected columns 'period,{column}'")
    rows.sort(key=lambda r: int(r["period"]))
    values = np.array([float(r[column]) for r in rows])
    periods = [int(r["period"]) for r in rows]
    if periods != list(range(1, len(rows) + 1)):
        raise ProfileLengthMismatch(f"{path}: periods must run 1..{len(rows)} without gaps")
    if normalize:
        values = values * len(values) / values.sum()
    return values


def bundled_profile(name: str) -> np.ndarray:
    """``"demand"`` (multipliers, mean 1) or ``"wind"`` (MW, 1 MW capacity)."""
    data = Path(__file__).parent / "data"
    if name == "demand":
        return load_profile_csv(data / "demand_profile.csv")
    if name == "wind":
        return load_profile_csv(data / "wind_profile.csv", column="mw")
    raise KeyError(name)
