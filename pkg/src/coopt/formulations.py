"""Co-optimization models of the power grid and the transit fleet.

Builders return a :class:`~coopt.model_ir.ModelIR`. Index conventions inside
models are 0-based: node ``i`` is ``Bus.id - 1``, generator ``g`` and
renewable unit ``u`` are positions in the network tuples, station ``k`` is a
position in ``fleet.stations``, bus ``b`` a position in ``fleet.buses``,
period ``t`` in ``0..T-1`` and scenario ``w`` in ``0..S-1``.

Variable families
-----------------
``pg[g,t]`` dispatch, ``theta[i,t]`` angles, ``flow[l,t]`` line flows (MW),
``pc/pdc[k,b,t]`` charge and discharge power, ``e[b,t]`` battery level,
``z[k,b,t]`` connection, ``y[b,t]`` relocation; stochastic models add
``pr[u,t]`` committed renewable output, ``pr_s[u,t,w]``, ``theta_s``,
``flow_s``, ``shed[i,t,w]``, ramp reserves ``rup/rdn[g,t]`` with deployments
``rup_s/rdn_s[g,t,w]``, or charging recourse ``pc_s/pdc_s[k,b,t,w]`` with
scenario battery levels ``e[b,t,w]``.

Nodal balance rows are ``balance[i,t]`` (first stage) and
``balance_s[i,t,w]`` (second stage); both are dual-tracked and written as
``injection - outflow = demand`` so their duals are prices in $/MWh.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .model_ir import EQ, GE, INF, LE, ModelIR, SolveResult
from .network import NetworkInstance
from .scenarios import ScenarioSet
from .transit import TransitFleet, validate_fleet

__all__ = [
    "PriceSet",
    "CoOptConfig",
    "FormulationError",
    "InfeasibleScheduleDetected",
    "PriceCoverageError",
    "MissingDuals",
    "build_deterministic",
    "build_mpopf",
    "build_transit_only",
    "build_ramping_2ssp",
    "build_charging_2ssp",
    "build_pricing_mpopf",
    "extract_prices",
    "objective_terms",
    "solution_residuals",
    "strip_simultaneous",
    "transit_net_charging",
    "line_flows",
    "export_solution",
]

PRICE_MODES = ("peak", "flat_first", "flat_second", "flat_both")


class FormulationError(ValueError):
    pass


class InfeasibleScheduleDetected(FormulationError):
    pass


class PriceCoverageError(FormulationError):
    pass


class MissingDuals(FormulationError):
    pass


@dataclass(frozen=True)
class PriceSet:
    """Charging prices: ``first_stage[i, t]`` and optional ``second_stage[i, t, w]`` in $/MWh."""

    first_stage: np.ndarray
    second_stage: np.ndarray | None = None
    mode: str = "peak"

    def __post_init__(self):
        first = np.array(self.first_stage, dtype=float)
        if first.ndim != 2:
            raise PriceCoverageError("first-stage prices must be [node, period]")
        first.setflags(write=False)
        object.__setattr__(self, "first_stage", first)
        if self.second_stage is not None:
            second = np.array(self.second_stage, dtype=float)
            if second.ndim != 3 or second.shape[:2] != first.shape:
                raise PriceCoverageError("second-stage prices must be [node, period, scenario]")
            second.setflags(write=False)
            object.__setattr__(self, "second_stage", second)
        if self.mode not in PRICE_MODES:
            raise ValueError(f"unknown price mode {self.mode!r}")

    @classmethod
    def flat(cls, value: float, nodes: int, periods: int, scenarios: int | None = None) -> PriceSet:
        second = None if scenarios is None else np.full((nodes, periods, scenarios), float(value))
        return cls(np.full((nodes, periods), float(value)), second, "flat_both")

    def with_mode(self, mode: str) -> PriceSet:
        """Flatten the requested stages to the mean over nodes and periods.

        The second stage keeps one level per scenario.
        """
        if mode not in PRICE_MODES:
            raise ValueError(f"unknown price mode {mode!r}")
        if self.mode != "peak":
            raise ValueError("flatten from peak prices only")
        first, second = self.first_stage, self.second_stage
        if mode in ("flat_first", "flat_both"):
            first = np.full_like(first, first.mean())
        if mode in ("flat_second", "flat_both") and second is not None:
            second = np.broadcast_to(second.mean(axis=(0, 1)), second.shape).copy()
        return PriceSet(first, second, mode)


@dataclass(frozen=True)
class CoOptConfig:
    """Weights and switches shared by the builders.

    ``gamma``/``ramp_down_mult`` override the generators' ramp costs as
    multiples of their linear cost; ``gamma=None`` keeps the network values.
    """

    alpha: float = 0.5
    gamma: float | None = None
    ramp_down_mult: float = 0.5
    station_capacity_enforced: bool = False
    deflate_second_stage: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


# -- internal building blocks ---------------------------------------------------


@dataclass
class _Ctx:
    kind: str
    net: NetworkInstance | None
    fleet: TransitFleet | None
    scenarios: ScenarioSet | None
    periods: int
    period_hours: float
    cfg: CoOptConfig
    terms: dict = field(default_factory=dict)


class _Builder:
    def __init__(self, name: str, ctx: _Ctx):
        self.m = ModelIR(name)
        self.ctx = ctx
        self.m.meta["ctx"] = ctx
        for fam, dims in {
            "pg": ("g", "t"),
            "theta": ("i", "t"),
            "flow": ("l", "t"),
            "pc": ("i", "b", "t"),
            "pdc": ("i", "b", "t"),
            "z": ("i", "b", "t"),
            "y": ("b", "t"),
            "e": ("b", "t", "w"),
            "pr": ("u", "t"),
            "pr_s": ("u", "t", "w"),
            "theta_s": ("i", "t", "w"),
            "flow_s": ("l", "t", "w"),
            "shed": ("i", "t", "w"),
            "rup": ("g", "t"),
            "rdn": ("g", "t"),
            "rup_s": ("g", "t", "w"),
            "rdn_s": ("g", "t", "w"),
            "pc_s": ("i", "b", "t", "w"),
            "pdc_s": ("i", "b", "t", "w"),
            "balance": ("i", "t"),
            "balance_s": ("i", "t", "w"),
            "dc_flow": ("l", "t"),
            "dc_flow_s": ("l", "t", "w"),
            "ramp_up": ("g", "t"),
            "ramp_down": ("g", "t"),
            "assign": ("b", "t"),
            "relocate": ("i", "j", "b", "t", "t"),
            "charge_cap": ("i", "b", "t", "w"),
            "discharge_cap": ("i", "b", "t", "w"),
            "battery": ("b", "t", "w"),
            "battery_init": ("b", "w"),
            "battery_terminal": ("b", "w"),
        }.items():
            self.m.declare(fam, *dims)

    def cost(self, term: str, weight: float, col: int, lin: float, quad: float = 0.0) -> None:
        rec = self.ctx.terms.setdefault(term, {"weight": weight, "lin": {}, "quad": {}})
        if lin:
            rec["lin"][col] = rec["lin"].get(col, 0.0) + lin
            self.m.add_obj(col, weight * lin)
        if quad:
            rec["quad"][col] = rec["quad"].get(col, 0.0) + quad
            self.m.add_quad(col, weight * quad)

    def term(self, name: str, weight: float) -> None:
        """Register a cost term even if it ends up empty, so reports are uniform."""
        self.ctx.terms.setdefault(name, {"weight": weight, "lin": {}, "quad": {}})


def _check_fleet(fleet: TransitFleet, net_like) -> None:
    errors = [f for f in validate_fleet(fleet, net_like) if f.severity == "error"]
    if errors:
        raise InfeasibleScheduleDetected("; ".join(f"{f.code}: {f.message}" + (f" (bus {f.bus})" if f.bus else "") for f in errors))


@dataclass(frozen=True)
class _Horizon:
    """Stand-in for a network when only the transit side is modeled."""

    periods: int
    period_hours: float
    n_nodes: int

    def has_node(self, node: int) -> bool:
        return 1 <= node <= self.n_nodes


def _local(fleet: TransitFleet) -> list[list[int]]:
    return [[t - 1 for t in bus.off_schedule] for bus in fleet.buses]


def _power_first_stage(B: _Builder, net: NetworkInstance, weight: float, extra_demand=None,
                       with_renewable: bool = False, headroom_rows: bool = False):
    """Dispatch, angles, flows, DC-flow definitions and ramping limits."""
    m = B.m
    T = net.periods
    base = net.base_mva
    B.term("generation", weight)
    for g, gen in enumerate(net.generators):
        for t in range(T):
            j = m.add_var(("pg", g, t), 0.0, gen.p_max)
            B.cost("generation", weight, j, gen.cost_lin, gen.cost_quad)
    for i in range(net.n_nodes):
        for t in range(T):
            lim = 0.0 if i == 0 else net.angle_limit
            m.add_var(("theta", i, t), -lim, lim)
    for l, br in enumerate(net.branches):
        for t in range(T):
            f = m.add_var(("flow", l, t), -br.flow_limit, br.flow_limit)
            k = base / br.reactance
            m.add_row(("dc_flow", l, t),
                      [(f, 1.0), (m.var(("theta", br.from_bus - 1, t)), -k), (m.var(("theta", br.to_bus - 1, t)), k)],
                      EQ, 0.0)
    for g, gen in enumerate(net.generators):
        for t in range(T - 1):
            a, b = m.var(("pg", g, t)), m.var(("pg", g, t + 1))
            m.add_row(("ramp_up", g, t), [(b, 1.0), (a, -1.0)], LE, gen.ramp_limit)
            m.add_row(("ramp_down", g, t), [(b, 1.0), (a, -1.0)], GE, -gen.ramp_limit)
    if with_renewable:
        for u, unit in enumerate(net.renewables):
            for t in range(T):
                m.add_var(("pr", u, t), 0.0, unit.p_max_committed)


def _balance_terms(m: ModelIR, net: NetworkInstance, t: int, stage: str, w: int | None = None):
    """Per-node lists of ``(col, coef)`` for generation and line flows."""
    N = net.n_nodes
    terms = [[] for _ in range(N)]
    if stage == "first":
        for g, gen in enumerate(net.generators):
            terms[gen.bus - 1].append((m.var(("pg", g, t)), 1.0))
        for u, unit in enumerate(net.renewables):
            if ("pr", u, t) in m.symbol_index:
                terms[unit.bus - 1].append((m.var(("pr", u, t)), 1.0))
        for l, br in enumerate(net.branches):
            f = m.var(("flow", l, t))
            terms[br.from_bus - 1].append((f, -1.0))
            terms[br.to_bus - 1].append((f, 1.0))
    else:
        for u, unit in enumerate(net.renewables):
            terms[unit.bus - 1].append((m.var(("pr_s", u, t, w)), 1.0))
            terms[unit.bus - 1].append((m.var(("pr", u, t)), -1.0))
        for l, br in enumerate(net.branches):
            fs, f = m.var(("flow_s", l, t, w)), m.var(("flow", l, t))
            terms[br.from_bus - 1] += [(fs, -1.0), (f, 1.0)]
            terms[br.to_bus - 1] += [(fs, 1.0), (f, -1.0)]
    return terms


def _transit_block(B: _Builder, fleet: TransitFleet, T: int, dt: float, prices: PriceSet, weight: float,
                   n_scen: int = 0, probs=None, recourse: bool = False, recourse_weight: float = 0.0):
    """Charging, battery, location and relocation variables and rows.

    With ``recourse`` the battery is tracked per scenario and second-stage
    charge/discharge columns are added; otherwise a single battery trajectory.
    """
    m = B.m
    cfg = B.ctx.cfg
    stations = [s - 1 for s in fleet.stations]
    K = len(stations)
    local = _local(fleet)
    N_price = prices.first_stage.shape[0]
    if max(stations) >= N_price or prices.first_stage.shape[1] != T:
        raise PriceCoverageError(f"first-stage prices {prices.first_stage.shape} do not cover stations/periods")
    if recourse:
        if prices.second_stage is None:
            raise PriceCoverageError("second-stage prices are required")
        if prices.second_stage.shape[2] != n_scen:
            raise PriceCoverageError("second-stage prices must have one column per scenario")
    B.term("charging", weight)
    if recourse:
        B.term("charging_recourse", recourse_weight)
    scen = range(n_scen) if recourse else [None]

    for b, bus in enumerate(fleet.buses):
        on = set(local[b])
        for t in range(T):
            active = t in on
            m.add_var(("y", b, t), 0.0, 1.0 if active else 0.0, binary=True)
            for k, node in enumerate(stations):
                lb = 1.0 if (active and k == 0 and t == local[b][0]) else 0.0
                m.add_var(("z", k, b, t), lb, 1.0 if active else 0.0, binary=True)
                jc = m.add_var(("pc", k, b, t), 0.0, bus.charge_rate_max if active else 0.0)
                jd = m.add_var(("pdc", k, b, t), 0.0, bus.discharge_rate_max if active else 0.0)
                price = prices.first_stage[node, t]
                B.cost("charging", weight, jc, price)
                B.cost("charging", weight, jd, -price)
                if recourse:
                    for w in scen:
                        jc2 = m.add_var(("pc_s", k, b, t, w), 0.0, bus.charge_rate_max if active else 0.0)
                        jd2 = m.add_var(("pdc_s", k, b, t, w), 0.0, bus.discharge_rate_max if active else 0.0)
                        p2 = probs[w] * prices.second_stage[node, t, w]
                        B.cost("charging_recourse", recourse_weight, jc2, p2)
                        B.cost("charging_recourse", recourse_weight, jd2, -p2)
        for w in scen:
            for t in local[b]:
                key = ("e", b, t) if w is None else ("e", b, t, w)
                m.add_var(key, bus.battery_min, bus.battery_max)

    for b, bus in enumerate(fleet.buses):
        seq = local[b]
        eta = bus.efficiency
        for w in scen:
            def e(t):
                return m.var(("e", b, t) if w is None else ("e", b, t, w))

            def update(t):
                terms = []
                for k in range(K):
                    terms.append((m.var(("pc", k, b, t)), -eta * dt))
                    terms.append((m.var(("pdc", k, b, t)), dt / eta))
                    if w is not None:
                        terms.append((m.var(("pc_s", k, b, t, w)), -eta * dt))
                        terms.append((m.var(("pdc_s", k, b, t, w)), dt / eta))
                terms.append((m.var(("y", b, t)), bus.traverse_consumption))
                return terms

            suffix = () if w is None else (w,)
            m.add_row(("battery_init", b) + suffix, [(e(seq[0]), 1.0)], EQ, bus.initial_level)
            for p in range(len(seq) - 1):
                t, t2 = seq[p], seq[p + 1]
                m.add_row(("battery", b, t) + suffix, [(e(t2), 1.0), (e(t), -1.0)] + update(t), EQ, 0.0)
            last = seq[-1]
            m.add_row(("battery_terminal", b) + suffix,
                      [(e(last), 1.0)] + [(c, -v) for c, v in update(last)], EQ, bus.battery_max)
            for t in seq:
                for k in range(K):
                    zc = m.var(("z", k, b, t))
                    cols_c = [(m.var(("pc", k, b, t)), 1.0), (zc, -bus.charge_rate_max)]
                    cols_d = [(m.var(("pdc", k, b, t)), 1.0), (zc, -bus.discharge_rate_max)]
                    if w is not None:
                        cols_c.append((m.var(("pc_s", k, b, t, w)), 1.0))
                        cols_d.append((m.var(("pdc_s", k, b, t, w)), 1.0))
                    m.add_row(("charge_cap", k, b, t) + suffix, cols_c, LE, 0.0)
                    m.add_row(("discharge_cap", k, b, t) + suffix, cols_d, LE, 0.0)

        for t in seq:
            m.add_row(("assign", b, t), [(m.var(("z", k, b, t)), 1.0) for k in range(K)] + [(m.var(("y", b, t)), 1.0)],
                      EQ, 1.0)
        steps = fleet.station_map.travel_steps
        for p, t in enumerate(seq):
            for k in range(K):
                for k2 in range(K):
                    if k == k2:
                        continue
                    for p2 in range(p + 1, min(p + int(steps[k, k2]), len(seq) - 1) + 1):
                        t2 = seq[p2]
                        m.add_row(("relocate", k, k2, b, t, t2),
                                  [(m.var(("z", k, b, t)), 1.0), (m.var(("z", k2, b, t2)), 1.0)], LE, 1.0)

    caps = fleet.station_map.capacity
    if cfg.station_capacity_enforced and caps is not None:
        for k in range(K):
            for t in range(T):
                m.add_row(("station_cap", k, t), [(m.var(("z", k, b, t)), 1.0) for b in range(len(fleet.buses))],
                          LE, caps[k])


def _station_charge_terms(m: ModelIR, fleet: TransitFleet, node: int, t: int, w: int | None = None):
    terms = []
    for k, s in enumerate(fleet.stations):
        if s - 1 != node:
            continue
        for b in range(len(fleet.buses)):
            if w is None:
                terms += [(m.var(("pc", k, b, t)), -1.0), (m.var(("pdc", k, b, t)), 1.0)]
            else:
                terms += [(m.var(("pc_s", k, b, t, w)), -1.0), (m.var(("pdc_s", k, b, t, w)), 1.0)]
    return terms


def _first_stage_balance(B: _Builder, net: NetworkInstance, fleet: TransitFleet | None, extra=None):
    m = B.m
    for t in range(net.periods):
        terms = _balance_terms(m, net, t, "first")
        for i in range(net.n_nodes):
            row = list(terms[i])
            if fleet is not None:
                row += _station_charge_terms(m, fleet, i, t)
            d = net.demand[i, t] + (0.0 if extra is None else extra[i, t])
            m.add_row(("balance", i, t), row, EQ, d, tracked=True)


def _second_stage_power(B: _Builder, net: NetworkInstance, scen: ScenarioSet, weight: float,
                        ramping: bool, fleet: TransitFleet | None = None):
    """Scenario copies of the network, renewable output, shedding and the
    second-stage balance; ramp reserves when ``ramping``."""
    m = B.m
    T, N = net.periods, net.n_nodes
    S = scen.n
    if scen.n_units != len(net.renewables):
        raise FormulationError(f"{scen.n_units} scenario units for {len(net.renewables)} renewable units")
    if scen.periods != T:
        raise FormulationError("scenario horizon differs from network horizon")
    base = net.base_mva
    probs = scen.probabilities
    for name in ("renewable", "shed") + (("ramping",) if ramping else ()):
        B.term(name, weight)
    for u, unit in enumerate(net.renewables):
        for t in range(T):
            for w in range(S):
                j = m.add_var(("pr_s", u, t, w), 0.0, float(scen.availability[w, u, t]))
                B.cost("renewable", weight, j, probs[w] * unit.cost_lin)
    for i in range(N):
        for t in range(T):
            for w in range(S):
                j = m.add_var(("shed", i, t, w), 0.0, float(net.demand[i, t]))
                B.cost("shed", weight, j, probs[w] * float(net.shed_cost[i, t]))
                lim = 0.0 if i == 0 else net.angle_limit
                m.add_var(("theta_s", i, t, w), -lim, lim)
    for l, br in enumerate(net.branches):
        k = base / br.reactance
        for t in range(T):
            for w in range(S):
                f = m.add_var(("flow_s", l, t, w), -br.flow_limit, br.flow_limit)
                m.add_row(("dc_flow_s", l, t, w),
                          [(f, 1.0), (m.var(("theta_s", br.from_bus - 1, t, w)), -k),
                           (m.var(("theta_s", br.to_bus - 1, t, w)), k)], EQ, 0.0)
    if ramping:
        cfg = B.ctx.cfg
        for g, gen in enumerate(net.generators):
            up_cost = gen.ramp_up_cost if cfg.gamma is None else cfg.gamma * gen.cost_lin
            dn_cost = gen.ramp_down_cost if cfg.gamma is None else cfg.ramp_down_mult * gen.cost_lin
            for t in range(T):
                pg = m.var(("pg", g, t))
                ru = m.add_var(("rup", g, t), 0.0, gen.second_stage_ramp_up_cap)
                rd = m.add_var(("rdn", g, t), 0.0, gen.second_stage_ramp_down_cap)
                m.add_row(("gen_headroom", g, t), [(pg, 1.0), (ru, 1.0)], LE, gen.p_max)
                m.add_row(("gen_floor", g, t), [(rd, 1.0), (pg, -1.0)], LE, 0.0)
                for w in range(S):
                    a = m.add_var(("rup_s", g, t, w), 0.0, INF)
                    b = m.add_var(("rdn_s", g, t, w), 0.0, INF)
                    m.add_row(("rup_link", g, t, w), [(a, 1.0), (ru, -1.0)], LE, 0.0)
                    m.add_row(("rdn_link", g, t, w), [(b, 1.0), (rd, -1.0)], LE, 0.0)
                    B.cost("ramping", weight, a, probs[w] * up_cost)
                    B.cost("ramping", weight, b, -probs[w] * dn_cost)
    for t in range(T):
        for w in range(S):
            terms = _balance_terms(m, net, t, "second", w)
            for i in range(N):
                row = list(terms[i]) + [(m.var(("shed", i, t, w)), 1.0)]
                if ramping:
                    for g, gen in enumerate(net.generators):
                        if gen.bus - 1 == i:
                            row += [(m.var(("rup_s", g, t, w)), 1.0), (m.var(("rdn_s", g, t, w)), -1.0)]
                if fleet is not None:
                    row += _station_charge_terms(m, fleet, i, t, w)
                m.add_row(("balance_s", i, t, w), row, EQ, 0.0, tracked=True)


def _finish(B: _Builder) -> ModelIR:
    ctx = B.ctx
    m = B.m
    m.meta["kind"] = ctx.kind
    m.meta["terms"] = ctx.terms
    expected = expected_counts(ctx.kind, ctx.net, ctx.fleet, ctx.scenarios.n if ctx.scenarios is not None else 0,
                               ctx.periods, ctx.cfg)
    for fam, n in expected.items():
        got = m.count_rows(fam) if fam in _ROW_FAMILIES else m.count_vars(fam)
        if got != n:
            raise AssertionError(f"{m.name}: {fam} has {got} entries, expected {n}")
    m.meta["counts"] = expected
    return m


_ROW_FAMILIES = {
    "balance", "balance_s", "dc_flow", "dc_flow_s", "ramp_up", "ramp_down", "assign", "relocate",
    "battery", "battery_init", "battery_terminal", "charge_cap", "discharge_cap", "gen_headroom",
    "gen_floor", "rup_link", "rdn_link", "station_cap",
}


def expected_counts(kind: str, net: NetworkInstance | None, fleet: TransitFleet | None, S: int, T: int,
                    cfg: CoOptConfig) -> dict[str, int]:
    """Closed-form row and column counts of each family for a model kind."""
    out: dict[str, int] = {}
    if net is not None:
        N, L, G, U = net.n_nodes, len(net.branches), len(net.generators), len(net.renewables)
        out.update(balance=N * T, dc_flow=L * T, ramp_up=G * max(T - 1, 0), ramp_down=G * max(T - 1, 0),
                   pg=G * T, theta=N * T, flow=L * T)
        if kind in ("ramp2ssp", "charge2ssp", "pricing"):
            out.update(balance_s=N * T * S, dc_flow_s=L * T * S, pr=U * T, pr_s=U * T * S, shed=N * T * S,
                       theta_s=N * T * S, flow_s=L * T * S)
        if kind in ("ramp2ssp", "pricing"):
            out.update(gen_headroom=G * T, gen_floor=G * T, rup_link=G * T * S, rdn_link=G * T * S,
                       rup=G * T, rdn=G * T, rup_s=G * T * S, rdn_s=G * T * S)
    if fleet is not None and kind not in ("mpopf", "pricing"):
        Bn, K = len(fleet.buses), len(fleet.stations)
        lens = [len(b.off_schedule) for b in fleet.buses]
        reps = S if kind == "charge2ssp" else 1
        steps = fleet.station_map.travel_steps
        reloc = sum(
            min(int(steps[i, j]), n - 1 - p)
            for n in lens for p in range(n) for i in range(K) for j in range(K) if i != j
        )
        out.update(
            assign=sum(lens), relocate=reloc, battery_init=Bn * reps, battery_terminal=Bn * reps,
            battery=sum(n - 1 for n in lens) * reps, charge_cap=K * sum(lens) * reps,
            discharge_cap=K * sum(lens) * reps, z=K * Bn * T, y=Bn * T, pc=K * Bn * T, pdc=K * Bn * T,
            e=sum(lens) * reps,
        )
        if kind == "charge2ssp":
            out.update(pc_s=K * Bn * T * S, pdc_s=K * Bn * T * S)
        if cfg.station_capacity_enforced and fleet.station_map.capacity is not None:
            out["station_cap"] = K * T
    return out


# -- public builders ------------------------------------------------------------


def build_deterministic(net: NetworkInstance, fleet: TransitFleet, prices: PriceSet,
                        cfg: CoOptConfig | None = None) -> ModelIR:
    """Single-scenario co-optimization of dispatch and fleet charging."""
    cfg = cfg or CoOptConfig()
    _check_fleet(fleet, net)
    B = _Builder("deterministic", _Ctx("det", net, fleet, None, net.periods, net.period_hours, cfg))
    _power_first_stage(B, net, 1.0 - cfg.alpha)
    _transit_block(B, fleet, net.periods, net.period_hours, prices, cfg.alpha)
    _first_stage_balance(B, net, fleet)
    return _finish(B)


def build_mpopf(net: NetworkInstance, extra_demand=None) -> ModelIR:
    """Multi-period DC-OPF with ``extra_demand[i, t]`` added to the load (negative means injection)."""
    cfg = CoOptConfig()
    extra = None if extra_demand is None else np.asarray(extra_demand, dtype=float)
    if extra is not None and extra.shape != net.demand.shape:
        raise FormulationError(f"extra demand shape {extra.shape} != {net.demand.shape}")
    B = _Builder("mpopf", _Ctx("mpopf", net, None, None, net.periods, net.period_hours, cfg))
    _power_first_stage(B, net, 1.0)
    _first_stage_balance(B, net, None, extra)
    return _finish(B)


def build_transit_only(fleet: TransitFleet, prices: PriceSet, periods: int, cfg: CoOptConfig | None = None,
                       period_hours: float = 1.0) -> ModelIR:
    """Fleet charging and relocation against fixed prices, objective ``sum c (pc - pdc)``."""
    cfg = cfg or CoOptConfig()
    _check_fleet(fleet, _Horizon(periods, period_hours, prices.first_stage.shape[0]))
    B = _Builder("transit_only", _Ctx("transit", None, fleet, None, periods, period_hours, cfg))
    _transit_block(B, fleet, periods, period_hours, prices, 1.0)
    return _finish(B)


def build_ramping_2ssp(net: NetworkInstance, fleet: TransitFleet, scenarios: ScenarioSet, prices: PriceSet,
                       cfg: CoOptConfig | None = None) -> ModelIR:
    """Two-stage model whose recourse is generator ramping (plus shedding)."""
    cfg = cfg or CoOptConfig()
    _check_fleet(fleet, net)
    B = _Builder("ramping_2ssp", _Ctx("ramp2ssp", net, fleet, scenarios, net.periods, net.period_hours, cfg))
    w = 1.0 - cfg.alpha
    _power_first_stage(B, net, w, with_renewable=True)
    _transit_block(B, fleet, net.periods, net.period_hours, prices, cfg.alpha)
    _first_stage_balance(B, net, fleet)
    _second_stage_power(B, net, scenarios, w, ramping=True)
    return _finish(B)


def build_charging_2ssp(net: NetworkInstance, fleet: TransitFleet, scenarios: ScenarioSet, prices: PriceSet,
                        cfg: CoOptConfig | None = None) -> ModelIR:
    """Two-stage model whose recourse is extra fleet charging/discharging (plus shedding).

    Locations stay first-stage; battery levels are tracked per scenario.
    """
    cfg = cfg or CoOptConfig()
    _check_fleet(fleet, net)
    B = _Builder("charging_2ssp", _Ctx("charge2ssp", net, fleet, scenarios, net.periods, net.period_hours, cfg))
    w = 1.0 - cfg.alpha
    _power_first_stage(B, net, w, with_renewable=True)
    _transit_block(B, fleet, net.periods, net.period_hours, prices, cfg.alpha, scenarios.n,
                   scenarios.probabilities, recourse=True, recourse_weight=cfg.alpha)
    _first_stage_balance(B, net, fleet)
    _second_stage_power(B, net, scenarios, w, ramping=False, fleet=fleet)
    return _finish(B)


def build_pricing_mpopf(net: NetworkInstance, scenarios: ScenarioSet, cfg: CoOptConfig | None = None) -> ModelIR:
    """Two-stage stochastic dispatch without the fleet; its balance duals are the charging prices."""
    cfg = cfg or CoOptConfig()
    B = _Builder("pricing_mpopf", _Ctx("pricing", net, None, scenarios, net.periods, net.period_hours, cfg))
    _power_first_stage(B, net, 1.0, with_renewable=True)
    _first_stage_balance(B, net, None)
    _second_stage_power(B, net, scenarios, 1.0, ramping=True)
    return _finish(B)


def extract_prices(model: ModelIR, result: SolveResult, deflate: bool | None = None) -> PriceSet:
    """Balance-row duals as a peak :class:`PriceSet`; second-stage duals divided by scenario probability."""
    if result.row_duals is None:
        raise MissingDuals("result carries no duals; solve a continuous model or use fix_integers_and_resolve")
    ctx: _Ctx = model.meta["ctx"]
    net = ctx.net
    T, N = net.periods, net.n_nodes
    first = np.array([[result.dual(("balance", i, t)) for t in range(T)] for i in range(N)])
    second = None
    if ctx.scenarios is not None and ("balance_s", 0, 0, 0) in model.row_index:
        scen = ctx.scenarios
        deflate = ctx.cfg.deflate_second_stage if deflate is None else deflate
        second = np.empty((N, T, scen.n))
        for w in range(scen.n):
            scale = 1.0 / scen.probabilities[w] if deflate and scen.probabilities[w] > 0 else 1.0
            for i in range(N):
                for t in range(T):
                    second[i, t, w] = result.dual(("balance_s", i, t, w)) * scale
    return PriceSet(first, second, "peak")


# -- solution analysis ---------------------------------------------------------------


def objective_terms(model: ModelIR, x) -> dict[str, dict[str, float]]:
    """Unweighted value and weight of every objective term at ``x``."""
    x = np.asarray(x, dtype=float)
    out = {}
    for name, rec in model.meta.get("terms", {}).items():
        val = sum(c * x[j] for j, c in rec["lin"].items()) + sum(q * x[j] ** 2 for j, q in rec["quad"].items())
        out[name] = {"weight": rec["weight"], "value": float(val), "weighted": float(rec["weight"] * val)}
    return out


def transit_net_charging(model: ModelIR, result: SolveResult, nodes: int, periods: int) -> np.ndarray:
    """First-stage ``sum_b (pc - pdc)`` per node and period, in MW."""
    ctx: _Ctx = model.meta["ctx"]
    fleet = ctx.fleet
    out = np.zeros((nodes, periods))
    if fleet is None:
        return out
    for k, s in enumerate(fleet.stations):
        for b in range(len(fleet.buses)):
            for t in range(periods):
                out[s - 1, t] += result[("pc", k, b, t)] - result[("pdc", k, b, t)]
    return out


def line_flows(model: ModelIR, result: SolveResult) -> np.ndarray:
    """First-stage flows ``[line, period]``."""
    net = model.meta["ctx"].net
    return np.array([[result[("flow", l, t)] for t in range(net.periods)] for l in range(len(net.branches))])


def _row_violation(model: ModelIR, x) -> np.ndarray:
    act = model.matrix() @ x
    rhs = np.array(model.rhs)
    sense = np.array(model.sense)
    return np.where(sense == LE, np.maximum(act - rhs, 0.0),
                    np.where(sense == GE, np.maximum(rhs - act, 0.0), np.abs(act - rhs)))


def solution_residuals(model: ModelIR, result: SolveResult) -> dict[str, float]:
    """Largest violation per constraint family, plus semantic checks recomputed from the data.

    Semantic entries (``assignment``, ``relocation``, ``terminal``,
    ``flow_limit``, ``angle``, ``integrality``, ``bounds``) do not read the
    model rows, so they catch transcription mistakes in the builders too.
    """
    x = np.asarray(result.x, dtype=float)
    ctx: _Ctx = model.meta["ctx"]
    viol = _row_violation(model, x)
    out: dict[str, float] = {}
    for r, key in enumerate(model.row_keys):
        out[key[0]] = max(out.get(key[0], 0.0), float(viol[r]))
    lb, ub = np.array(model.lb), np.array(model.ub)
    out["bounds"] = float(np.max(np.maximum(np.maximum(lb - x, 0.0), np.maximum(x - ub, 0.0)), initial=0.0))
    ints = np.array(model.is_int, dtype=bool)
    out["integrality"] = float(np.max(np.abs(x[ints] - np.round(x[ints])), initial=0.0))
    net, fleet = ctx.net, ctx.fleet

    if net is not None:
        fl, ang = 0.0, 0.0
        for key, j in model.symbol_index.items():
            if key[0] in ("flow", "flow_s"):
                fl = max(fl, abs(x[j]) - net.branches[key[1]].flow_limit)
            elif key[0] in ("theta", "theta_s"):
                ang = max(ang, abs(x[j]) - net.angle_limit, abs(x[j]) if key[1] == 0 else 0.0)
        out["flow_limit"] = max(fl, 0.0)
        out["angle"] = max(ang, 0.0)
        # DC flow law recomputed from angles
        law = 0.0
        for key, j in model.symbol_index.items():
            if key[0] in ("flow", "flow_s"):
                br = net.branches[key[1]]
                tkey = "theta" if key[0] == "flow" else "theta_s"
                ti = x[model.var((tkey, br.from_bus - 1) + key[2:])]
                tj = x[model.var((tkey, br.to_bus - 1) + key[2:])]
                law = max(law, abs(x[j] - net.base_mva * (ti - tj) / br.reactance))
        out["dc_law"] = law

    if fleet is not None:
        T = ctx.periods
        K = len(fleet.stations)
        steps = fleet.station_map.travel_steps
        assign = reloc = term = rec = 0.0
        scen = [None] if ctx.kind != "charge2ssp" else list(range(ctx.scenarios.n))
        for b, bus in enumerate(fleet.buses):
            seq = [t - 1 for t in bus.off_schedule]
            for t in seq:
                s = sum(x[model.var(("z", k, b, t))] for k in range(K)) + x[model.var(("y", b, t))]
                assign = max(assign, abs(s - 1.0))
            # relocation legality from the realized location sequence
            located = []
            for p, t in enumerate(seq):
                for k in range(K):
                    if x[model.var(("z", k, b, t))] > 0.5:
                        located.append((p, k))
            for a in range(len(located)):
                for c in range(a + 1, len(located)):
                    (p1, k1), (p2, k2) = located[a], located[c]
                    if k1 != k2 and p2 - p1 <= steps[k1, k2]:
                        reloc = max(reloc, 1.0)
            for w in scen:
                def lvl(t):
                    return x[model.var(("e", b, t) if w is None else ("e", b, t, w))]

                def delta(t):
                    d = 0.0
                    for k in range(K):
                        pc = x[model.var(("pc", k, b, t))]
                        pdc = x[model.var(("pdc", k, b, t))]
                        if w is not None:
                            pc += x[model.var(("pc_s", k, b, t, w))]
                            pdc += x[model.var(("pdc_s", k, b, t, w))]
                        d += bus.efficiency * pc * ctx.period_hours - pdc * ctx.period_hours / bus.efficiency
                    return d - bus.traverse_consumption * x[model.var(("y", b, t))]

                rec = max(rec, abs(lvl(seq[0]) - bus.initial_level))
                for p in range(len(seq) - 1):
                    rec = max(rec, abs(lvl(seq[p + 1]) - lvl(seq[p]) - delta(seq[p])))
                term = max(term, abs(lvl(seq[-1]) + delta(seq[-1]) - bus.battery_max))
            for t in range(T):
                if t not in seq:
                    for k in range(K):
                        assign = max(assign, abs(x[model.var(("z", k, b, t))]))
        out["assignment"] = assign
        out["relocation"] = reloc
        out["recursion"] = rec
        out["terminal"] = term
    return out


def strip_simultaneous(model: ModelIR, result: SolveResult) -> tuple[np.ndarray, float, float]:
    """Remove ``min(pc, pdc)`` from both at every first-stage (station, bus, period).

    Battery levels are re-propagated from the initial level. Returns the new
    point, its largest row/bound violation and the objective change.
    """
    ctx: _Ctx = model.meta["ctx"]
    fleet = ctx.fleet
    x = np.array(result.x, dtype=float)
    K = len(fleet.stations)
    dt = ctx.period_hours
    scen = [None] if ctx.kind != "charge2ssp" else list(range(ctx.scenarios.n))
    for b, bus in enumerate(fleet.buses):
        seq = [t - 1 for t in bus.off_schedule]
        for t in seq:
            for k in range(K):
                jc, jd = model.var(("pc", k, b, t)), model.var(("pdc", k, b, t))
                mval = min(x[jc], x[jd])
                x[jc] -= mval
                x[jd] -= mval
        for w in scen:
            def col(t):
                return model.var(("e", b, t) if w is None else ("e", b, t, w))

            for p in range(len(seq) - 1):
                t = seq[p]
                d = 0.0
                for k in range(K):
                    pc, pdc = x[model.var(("pc", k, b, t))], x[model.var(("pdc", k, b, t))]
                    if w is not None:
                        pc += x[model.var(("pc_s", k, b, t, w))]
                        pdc += x[model.var(("pdc_s", k, b, t, w))]
                    d += bus.efficiency * pc * dt - pdc * dt / bus.efficiency
                x[col(seq[p + 1])] = x[col(t)] + d - bus.traverse_consumption * x[model.var(("y", b, t))]
    viol = float(np.max(_row_violation(model, x), initial=0.0))
    lb, ub = np.array(model.lb), np.array(model.ub)
    viol = max(viol, float(np.max(np.maximum(lb - x, 0.0), initial=0.0)), float(np.max(np.maximum(x - ub, 0.0), initial=0.0)))
    return x, viol, model.objective_value(x) - model.objective_value(result.x)


_EXPORT_GROUPS = {
    "dispatch": ("pg", "pr", "pr_s", "rup", "rdn", "rup_s", "rdn_s", "shed"),
    "flows": ("flow", "flow_s"),
    "angles": ("theta", "theta_s"),
    "charge": ("pc", "pdc", "pc_s", "pdc_s"),
    "levels": ("e",),
    "locations": ("z", "y"),
}


def export_solution(model: ModelIR, result: SolveResult, outdir: str | Path) -> dict:
    """Write one CSV per variable group and ``summary.json``; returns the summary.

    Indices in files are 1-based. The summary holds no timing data so that
    repeated runs produce identical files.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if result.x is not None:
        for group, fams in _EXPORT_GROUPS.items():
            rows = []
            for key, j in model.symbol_index.items():
                if key[0] in fams:
                    labels = model.dims.get(key[0], ())
                    idx = ";".join(f"{labels[n] if n < len(labels) else 'x'}={v + 1}" for n, v in enumerate(key[1:]))
                    rows.append((key[0], idx, repr(float(result.x[j]))))
            if rows:
                with open(outdir / f"{group}.csv", "w", newline="") as fh:
                    wr = csv.writer(fh)
                    wr.writerow(["variable", "index", "value"])
                    wr.writerows(rows)
    summary = {
        "model": model.name,
        "status": result.status,
        "objective": None if result.x is None else float(result.objective),
        "terms": {} if result.x is None else objective_terms(model, result.x),
        "counts": {"variables": model.n_vars, "binaries": model.n_int, "rows": model.n_rows},
    }
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
