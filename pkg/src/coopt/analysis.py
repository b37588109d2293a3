"""Experiment drivers: uncoordinated benchmark, sweeps and pricing study.

Every driver returns a plain report object and has a matching ``write_*``
function that emits ``report.json`` plus one CSV per figure. CSV floats are
written with ``repr`` so repeated runs compare byte for byte.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .formulations import (
    CoOptConfig,
    PriceSet,
    build_charging_2ssp,
    build_deterministic,
    build_mpopf,
    build_pricing_mpopf,
    build_ramping_2ssp,
    build_transit_only,
    extract_prices,
    line_flows,
    objective_terms,
    transit_net_charging,
)
from .model_ir import SolveOptions, SolveResult, solve
from .network import NetworkInstance
from .scenarios import ScenarioSet
from .transit import TransitFleet

log = logging.getLogger(__name__)

__all__ = [
    "AnalysisError",
    "ZeroAvailableWind",
    "AllAnticipationsInfeasible",
    "BenefitReport",
    "EfficacyReport",
    "CongestionReport",
    "CapacityReport",
    "PricingStudyReport",
    "wind_utilization",
    "wind_shortfall",
    "lmp_prices",
    "run_uncoordinated",
    "run_efficacy_sweep",
    "run_congestion_sweep",
    "run_capacity_sweep",
    "run_pricing_study",
    "write_benefit_report",
    "write_efficacy_report",
    "write_congestion_report",
    "write_capacity_report",
    "write_pricing_report",
    "GAMMA_GRID",
    "UNCOORDINATED_SCALE",
    "PERTURBATION_SIGMA",
    "FULL_FLOW_TOL",
]

GAMMA_GRID = (0.8, 0.9, 1.0, 1.1, 1.2, 1.3)
UNCOORDINATED_SCALE = 0.5
PERTURBATION_SIGMA = 0.2
FULL_FLOW_TOL = 1e-6
PRICE_STUDY_MODES = ("peak", "flat_first", "flat_second", "flat_both")


class AnalysisError(RuntimeError):
    pass


class ZeroAvailableWind(AnalysisError):
    pass


class AllAnticipationsInfeasible(AnalysisError):
    pass


# -- metrics -----------------------------------------------------------------------


def _wind_usage(result: SolveResult) -> np.ndarray:
    """Second-stage renewable output ``[scenario, unit, period]``."""
    ctx = result.model.meta["ctx"]
    scen = ctx.scenarios
    if scen is None or ("pr_s", 0, 0, 0) not in result.model.symbol_index:
        raise AnalysisError("wind utilization needs a two-stage model with renewables")
    out = np.empty(scen.availability.shape)
    for w in range(scen.n):
        for u in range(scen.n_units):
            for t in range(scen.periods):
                out[w, u, t] = result[("pr_s", u, t, w)]
    return out


def wind_utilization(result: SolveResult, scenarios: ScenarioSet) -> float:
    """Used over available wind, both summed without probability weights."""
    if not result.ok:
        raise AnalysisError(f"result is {result.status}")
    avail = float(np.sum(scenarios.availability))
    if avail <= 0.0:
        raise ZeroAvailableWind("no wind available in any scenario")
    return float(np.sum(_wind_usage(result))) / avail


def wind_shortfall(result: SolveResult, scenarios: ScenarioSet) -> np.ndarray:
    """Curtailed wind per period, summed over scenarios and units."""
    return (scenarios.availability - _wind_usage(result)).sum(axis=(0, 1))


def lmp_prices(net: NetworkInstance, extra_demand=None, options: SolveOptions | None = None) -> tuple[PriceSet, SolveResult]:
    """Solve the plain multi-period OPF and return its balance duals as prices."""
    model = build_mpopf(net, extra_demand)
    res = solve(model, options)
    if not res.ok:
        raise AnalysisError(f"price-setting OPF is {res.status}")
    return extract_prices(model, res), res


def _flat_mean(prices: PriceSet) -> float:
    return float(prices.first_stage.mean())


def _transit_cost(schedule: np.ndarray, prices: PriceSet, dt: float) -> float:
    return float(np.sum(prices.first_stage * schedule) * dt)


# -- uncoordinated benchmark ------------------------------------------------------------------


@dataclass
class AnticipationOutcome:
    index: int
    feasible: bool
    iso_objective: float
    transit_objective: float
    total: float


@dataclass
class BenefitReport:
    """Uncoordinated outcomes per anticipation and the coordinated benchmark.

    Uncoordinated values are already multiplied by ``scale``; infeasible
    realizations carry ``inf``.
    """

    anticipations: list[AnticipationOutcome]
    coordinated_iso: float
    coordinated_transit: float
    coordinated_total: float
    baseline_prices: PriceSet
    scale: float = UNCOORDINATED_SCALE
    seed: int | None = None

    @property
    def feasible(self) -> list[AnticipationOutcome]:
        return [a for a in self.anticipations if a.feasible]

    def dominance_count(self, rtol: float = 1e-7) -> int:
        """Anticipations whose scaled uncoordinated total is not below the coordinated one."""
        tol = rtol * max(1.0, abs(self.coordinated_total))
        return sum(1 for a in self.anticipations if a.total >= self.coordinated_total - tol)

    def mean_uncoordinated_transit(self) -> float:
        vals = [a.transit_objective for a in self.feasible]
        return float(np.mean(vals)) if vals else math.nan

    def transit_relative_gap(self) -> float:
        ref = self.coordinated_transit
        return abs(self.mean_uncoordinated_transit() - ref) / max(abs(ref), 1e-12)

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "seed": self.seed,
            "coordinated": {
                "iso_objective": self.coordinated_iso,
                "transit_objective": self.coordinated_transit,
                "total": self.coordinated_total,
            },
            "uncoordinated": [
                {"scenario": a.index + 1, "feasible": a.feasible, "iso_objective": _j(a.iso_objective),
                 "transit_objective": _j(a.transit_objective), "total": _j(a.total)}
                for a in self.anticipations
            ],
            "dominance": f"{self.dominance_count()}/{len(self.anticipations)}",
            "mean_uncoordinated_transit": _j(self.mean_uncoordinated_transit()),
            "transit_relative_gap": _j(self.transit_relative_gap()),
        }


def _j(v: float):
    return v if math.isfinite(v) else None


def _solve_transit(fleet: TransitFleet, prices: PriceSet, net: NetworkInstance, cfg: CoOptConfig,
                   options: SolveOptions | None) -> np.ndarray | None:
    model = build_transit_only(fleet, prices, net.periods, cfg, net.period_hours)
    res = solve(model, options)
    if not res.ok:
        return None
    return transit_net_charging(model, res, net.n_nodes, net.periods)


def run_uncoordinated(net: NetworkInstance, fleet: TransitFleet, n_scenarios: int, cfg: CoOptConfig | None = None,
                      seed: int | None = 0, options: SolveOptions | None = None,
                      sigma: float = PERTURBATION_SIGMA, per_node: bool = False) -> BenefitReport:
    """Sequential ISO/transit scheme against the jointly optimized benchmark.

    Anticipated charging schedules come from the transit-only model solved
    at the fleet-free LMPs times i.i.d. lognormal(0, ``sigma``) factors. By
    default one factor is drawn per period and shared by all nodes; with
    ``per_node`` every node-period gets its own draw, which invites
    relocation arbitrage and makes each transit solve far slower.
    """
    if n_scenarios < 1:
        raise ValueError("n_scenarios must be >= 1")
    cfg = cfg or CoOptConfig()
    base, _ = lmp_prices(net, options=options)
    rng = np.random.default_rng(seed)
    N, T = base.first_stage.shape
    if per_node:
        factors = rng.lognormal(0.0, sigma, size=(n_scenarios, N, T))
    else:
        factors = np.repeat(rng.lognormal(0.0, sigma, size=(n_scenarios, 1, T)), N, axis=1)

    anticipated_lmps: list[PriceSet | None] = []
    for k in range(n_scenarios):
        guess = _solve_transit(fleet, PriceSet(base.first_stage * factors[k]), net, cfg, options)
        if guess is None:
            anticipated_lmps.append(None)
            continue
        try:
            lmp, _ = lmp_prices(net, guess, options)
        except AnalysisError:
            anticipated_lmps.append(None)
            continue
        anticipated_lmps.append(lmp)
    usable = [p for p in anticipated_lmps if p is not None]
    if not usable:
        raise AllAnticipationsInfeasible(f"none of {n_scenarios} anticipated schedules is realizable")
    baseline = PriceSet(np.mean([p.first_stage for p in usable], axis=0))

    s = UNCOORDINATED_SCALE
    outcomes = []
    for k, lmp in enumerate(anticipated_lmps):
        if lmp is None:
            outcomes.append(AnticipationOutcome(k, False, math.inf, math.inf, math.inf))
            continue
        policy = _solve_transit(fleet, lmp, net, cfg, options)
        realized = solve(build_mpopf(net, policy), options) if policy is not None else None
        if realized is None or not realized.ok:
            outcomes.append(AnticipationOutcome(k, False, math.inf, math.inf, math.inf))
            continue
        iso = s * realized.objective
        transit = s * _transit_cost(policy, baseline, net.period_hours)
        outcomes.append(AnticipationOutcome(k, True, iso, transit, iso + transit))

    coord_cfg = CoOptConfig(alpha=0.5, gamma=cfg.gamma, ramp_down_mult=cfg.ramp_down_mult,
                            station_capacity_enforced=cfg.station_capacity_enforced)
    model = build_deterministic(net, fleet, baseline, coord_cfg)
    res = solve(model, options)
    if not res.ok:
        raise AnalysisError(f"coordinated model is {res.status}")
    terms = objective_terms(model, res.x)
    return BenefitReport(
        anticipations=outcomes,
        coordinated_iso=terms["generation"]["weighted"],
        coordinated_transit=terms["charging"]["weighted"],
        coordinated_total=res.objective,
        baseline_prices=baseline,
        seed=seed,
    )


# -- ramping versus charging recourse ------------------------------------------------------------------


@dataclass
class EfficacyPoint:
    gamma: float
    ramping_total: float
    charging_total: float
    ramping_terms: dict
    charging_terms: dict
    mean_first_stage_price: float
    mean_second_stage_price: float


@dataclass
class EfficacyReport:
    points: list[EfficacyPoint]

    def __post_init__(self):
        g = [p.gamma for p in self.points]
        if any(b <= a for a, b in zip(g, g[1:])):
            raise ValueError("gamma values must be strictly increasing")

    def differences(self) -> np.ndarray:
        return np.array([p.ramping_total - p.charging_total for p in self.points])

    def sign_changes(self) -> int:
        s = np.sign(self.differences())
        s = s[s != 0]
        return int(np.sum(s[1:] != s[:-1]))

    def to_dict(self) -> dict:
        return {
            "points": [
                {"gamma": p.gamma, "ramping_total": p.ramping_total, "charging_total": p.charging_total,
                 "ramping_terms": p.ramping_terms, "charging_terms": p.charging_terms,
                 "mean_first_stage_price": p.mean_first_stage_price,
                 "mean_second_stage_price": p.mean_second_stage_price}
                for p in self.points
            ],
            "sign_changes": self.sign_changes(),
        }


def _weighted_terms(model, res) -> dict:
    return {k: v["weighted"] for k, v in objective_terms(model, res.x).items()}


def run_efficacy_sweep(net: NetworkInstance, fleet: TransitFleet, scenarios: ScenarioSet,
                       gamma_grid=GAMMA_GRID, cfg: CoOptConfig | None = None,
                       options: SolveOptions | None = None) -> EfficacyReport:
    """Ramping versus charging recourse as the ramp-up cost multiplier varies."""
    grid = [float(g) for g in gamma_grid]
    if not grid:
        raise ValueError("gamma grid is empty")
    cfg = cfg or CoOptConfig()
    points = []
    for g in grid:
        net_g = net.with_ramp_costs(g, cfg.ramp_down_mult)
        pm = build_pricing_mpopf(net_g, scenarios, cfg)
        pres = solve(pm, options)
        if not pres.ok:
            raise AnalysisError(f"pricing model at gamma={g} is {pres.status}")
        prices = extract_prices(pm, pres)
        ramp = build_ramping_2ssp(net_g, fleet, scenarios, prices, cfg)
        rres = solve(ramp, options)
        charge = build_charging_2ssp(net_g, fleet, scenarios, prices, cfg)
        cres = solve(charge, options)
        for name, r in (("ramping", rres), ("charging", cres)):
            if not r.ok:
                raise AnalysisError(f"{name} model at gamma={g} is {r.status}")
        log.info("gamma=%.2f ramping=%.6f charging=%.6f", g, rres.objective, cres.objective)
        points.append(EfficacyPoint(g, rres.objective, cres.objective, _weighted_terms(ramp, rres),
                                    _weighted_terms(charge, cres), float(prices.first_stage.mean()),
                                    float(prices.second_stage.mean())))
    return EfficacyReport(points)


# -- congestion and capacity sweeps ------------------------------------------------


@dataclass
class CongestionReport:
    capacities: list[float]
    coop: list[int]
    noncoop: list[int]
    line_cap: float

    def __post_init__(self):
        for c in self.coop + self.noncoop:
            if c < 0 and c != -1:
                raise ValueError("congestion counts are >= 0 or exactly -1")

    def to_dict(self) -> dict:
        return {"line_cap": self.line_cap, "capacity_mwh": self.capacities, "coop": self.coop, "noncoop": self.noncoop}


def _full_lines(flows: np.ndarray, net: NetworkInstance) -> int:
    limits = np.array([br.flow_limit for br in net.branches])[:, None]
    return int(np.sum(np.abs(flows) >= limits - FULL_FLOW_TOL))


def run_congestion_sweep(net: NetworkInstance, fleet: TransitFleet, capacity_grid, line_cap: float,
                         prices: PriceSet, cfg: CoOptConfig | None = None, options: SolveOptions | None = None,
                         scale_rates: bool = False) -> CongestionReport:
    """Fully loaded line-periods per battery capacity, jointly and sequentially planned."""
    grid = [float(c) for c in capacity_grid]
    if not grid:
        raise ValueError("capacity grid is empty")
    cfg = cfg or CoOptConfig()
    capped = net.with_flow_limit(line_cap)
    coop, noncoop = [], []
    for cap in grid:
        f = fleet.with_capacity(cap, scale_rates)
        model = build_deterministic(capped, f, prices, cfg)
        res = solve(model, options)
        coop.append(_full_lines(line_flows(model, res), capped) if res.ok else -1)
        schedule = _solve_transit(f, prices, capped, cfg, options)
        count = -1
        if schedule is not None:
            iso = build_mpopf(capped, schedule)
            ires = solve(iso, options)
            if ires.ok:
                count = _full_lines(line_flows(iso, ires), capped)
        noncoop.append(count)
        log.info("capacity=%g coop=%d noncoop=%d", cap, coop[-1], noncoop[-1])
    return CongestionReport(grid, coop, noncoop, float(line_cap))


@dataclass
class CapacityPoint:
    capacity: float
    feasible: bool
    total: float
    generation: float
    charging: float
    generation_by_period: list[float]


@dataclass
class CapacityReport:
    points: list[CapacityPoint] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"points": [p.__dict__ for p in self.points]}


def run_capacity_sweep(net: NetworkInstance, fleet: TransitFleet, capacity_grid, prices: PriceSet,
                       cfg: CoOptConfig | None = None, options: SolveOptions | None = None,
                       scale_rates: bool = False) -> CapacityReport:
    """Deterministic co-optimization per battery capacity with its objective split."""
    cfg = cfg or CoOptConfig()
    out = CapacityReport()
    for cap in capacity_grid:
        model = build_deterministic(net, fleet.with_capacity(float(cap), scale_rates), prices, cfg)
        res = solve(model, options)
        if not res.ok:
            out.points.append(CapacityPoint(float(cap), False, math.nan, math.nan, math.nan, []))
            continue
        terms = objective_terms(model, res.x)
        gen = [sum(res[("pg", g, t)] for g in range(len(net.generators))) for t in range(net.periods)]
        out.points.append(CapacityPoint(float(cap), True, res.objective, terms["generation"]["weighted"],
                                        terms["charging"]["weighted"], gen))
    return out


# -- pricing study ---------------------------------------------------------------


@dataclass
class PricingStudyReport:
    modes: list[str]
    wind_used: list[float]
    wind_available: float
    utilization: list[float]
    objectives: list[float]
    mean_prices: list[tuple[float, float]]

    def spread(self) -> float:
        return float(max(self.utilization) - min(self.utilization))

    def to_dict(self) -> dict:
        return {
            "wind_available": self.wind_available,
            "modes": [
                {"mode": m, "wind_used": u, "utilization": r, "objective": o,
                 "mean_first_stage_price": p[0], "mean_second_stage_price": p[1]}
                for m, u, r, o, p in zip(self.modes, self.wind_used, self.utilization, self.objectives, self.mean_prices)
            ],
            "utilization_spread": self.spread(),
        }


def run_pricing_study(net: NetworkInstance, fleet: TransitFleet, scenarios: ScenarioSet,
                      cfg: CoOptConfig | None = None, options: SolveOptions | None = None,
                      prices: PriceSet | None = None) -> PricingStudyReport:
    """Charging-recourse model under peak and flattened price stages."""
    cfg = cfg or CoOptConfig()
    if prices is None:
        pm = build_pricing_mpopf(net, scenarios, cfg)
        pres = solve(pm, options)
        if not pres.ok:
            raise AnalysisError(f"pricing model is {pres.status}")
        prices = extract_prices(pm, pres)
    avail = float(np.sum(scenarios.availability))
    used, util, objs, means = [], [], [], []
    for mode in PRICE_STUDY_MODES:
        p = prices if mode == "peak" else prices.with_mode(mode)
        res = solve(build_charging_2ssp(net, fleet, scenarios, p, cfg), options)
        if not res.ok:
            raise AnalysisError(f"charging model under {mode} prices is {res.status}")
        u = wind_utilization(res, scenarios)
        used.append(u * avail)
        util.append(u)
        objs.append(res.objective)
        means.append((float(p.first_stage.mean()), float(p.second_stage.mean())))
    return PricingStudyReport(list(PRICE_STUDY_MODES), used, avail, util, objs, means)


# -- report writers ----------------------------------------------------------------


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_json(path: Path, data: dict) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def write_benefit_report(report: BenefitReport, outdir: str | Path) -> Path:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [[a.index + 1, int(a.feasible), a.iso_objective, a.transit_objective, a.total,
             report.coordinated_iso, report.coordinated_transit, report.coordinated_total]
            for a in report.anticipations]
    _write_csv(out / "fig12_benefit.csv",
               ["scenario", "feasible", "uncoord_iso", "uncoord_transit", "uncoord_total",
                "coord_iso", "coord_transit", "coord_total"], rows)
    T = report.baseline_prices.first_stage.shape[1]
    _write_csv(out / "baseline_prices.csv", ["node"] + [f"t{t + 1}" for t in range(T)],
               [[i + 1] + [float(v) for v in row] for i, row in enumerate(report.baseline_prices.first_stage)])
    _write_json(out / "report.json", {"analysis": "benefit", **report.to_dict()})
    return out


def write_efficacy_report(report: EfficacyReport, outdir: str | Path) -> Path:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "fig14_efficacy.csv", ["gamma", "ramping_total", "charging_total", "difference"],
               [[p.gamma, p.ramping_total, p.charging_total, p.ramping_total - p.charging_total]
                for p in report.points])
    _write_json(out / "report.json", {"analysis": "efficacy", **report.to_dict()})
    return out


def write_congestion_report(report: CongestionReport, outdir: str | Path) -> Path:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "fig18_congestion.csv", ["capacity_mwh", "coop", "noncoop"],
               zip(report.capacities, report.coop, report.noncoop))
    _write_json(out / "report.json", {"analysis": "congestion", **report.to_dict()})
    return out


def write_capacity_report(report: CapacityReport, outdir: str | Path) -> Path:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "fig6_capacity.csv", ["capacity_mwh", "feasible", "total", "generation", "charging"],
               [[p.capacity, int(p.feasible), p.total, p.generation, p.charging] for p in report.points])
    T = max((len(p.generation_by_period) for p in report.points), default=0)
    _write_csv(out / "fig7_generation.csv", ["capacity_mwh"] + [f"t{t + 1}" for t in range(T)],
               [[p.capacity] + list(map(float, p.generation_by_period)) for p in report.points if p.feasible])
    _write_json(out / "report.json", {"analysis": "capacity", **report.to_dict()})
    return out


def write_pricing_report(report: PricingStudyReport, outdir: str | Path) -> Path:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "fig16_pricing.csv", ["mode", "wind_used", "utilization", "objective"],
               zip(report.modes, report.wind_used, report.utilization, report.objectives))
    _write_json(out / "report.json", {"analysis": "pricing_study", **report.to_dict()})
    return out
