"""Exhaustive-enumeration reference solutions for two-node instances.

The oracle knows nothing about :mod:`coopt.model_ir`; it evaluates the
objective of each model directly on a grid of decisions. Instances are kept
small and grid-aligned so that the optimum of the continuous problem lies on
the grid:

* node 1 holds the only generator (linear cost) and no load, node 2 holds
  the load and the renewable unit; a single line joins them;
* one transit bus with efficiency 1, whose off-schedule does not wrap past
  the last period;
* every MW or MWh quantity is a multiple of ``step``.

Power-side quantities follow from the fleet decisions in closed form
(generation covers load plus charging less renewable output, the line
carries what node 2 needs). Locations are enumerated as whole sequences and
checked against the relocation rule; the remaining decisions are found by
dynamic programming over periods. Free first-stage ramp reserves are taken at
their largest admissible value, which can only enlarge the recourse set.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .formulations import PriceSet
from .network import Branch, Bus, Generator, NetworkInstance, NetworkDefaults, RenewableUnit
from .scenarios import ScenarioSet
from .transit import StationMap, TransitBus, TransitFleet

__all__ = ["TwoNodeInstance", "micro2", "micro2_stochastic", "random_variant", "solve_oracle", "INSTANCES"]


@dataclass(frozen=True)
class TwoNodeInstance:
    name: str
    demand: tuple[float, ...]  # MW at node 2 per period
    gen_cost: float = 10.0
    gen_quad: float = 0.0
    gen_pmax: float = 10.0
    ramp_limit: float = 2.0
    reserve_cap: float = 2.0
    ramp_up_cost: float = 12.0
    ramp_down_cost: float = 5.0
    reactance: float = 0.1
    line_limit: float = 5.0
    base_mva: float = 100.0
    angle_limit: float = math.pi / 2
    shed_cost: float = 100.0
    battery_min: float = 0.0
    battery_max: float = 2.0
    initial_level: float = 2.0
    charge_rate: float = 1.0
    discharge_rate: float = 1.0
    consumption: float = 0.0
    off_schedule: tuple[int, ...] | None = None  # 1-based, default: every period
    stations: tuple[int, ...] = (2,)  # node ids, depot first
    travel_steps: int = 1
    prices: tuple[tuple[float, ...], ...] | None = None  # [node][t]; default flat gen_cost
    prices_second: tuple | None = None  # [node][t][w]; default equal to first stage
    wind_cap: float = 2.0
    wind_cost: float | None = None
    wind: tuple[tuple[float, ...], ...] = ()  # [w][t] availability
    probabilities: tuple[float, ...] = ()
    alpha: float = 0.5
    step: float = 0.5

    @property
    def T(self) -> int:
        return len(self.demand)

    @property
    def schedule(self) -> tuple[int, ...]:
        return self.off_schedule or tuple(range(1, self.T + 1))

    def price_first(self) -> np.ndarray:
        if self.prices is None:
            return np.full((2, self.T), self.gen_cost)
        return np.array(self.prices, dtype=float)

    def price_second(self) -> np.ndarray:
        if self.prices_second is None:
            return np.repeat(self.price_first()[:, :, None], max(len(self.wind), 1), axis=2)
        return np.array(self.prices_second, dtype=float)

    # -- conversion to library objects -----------------------------------------------
    def network(self) -> NetworkInstance:
        demand = np.vstack([np.zeros(self.T), np.array(self.demand, dtype=float)])
        gen = Generator(1, self.gen_pmax, self.gen_cost, self.gen_quad, self.ramp_limit, self.reserve_cap,
                        self.reserve_cap, self.ramp_up_cost, self.ramp_down_cost)
        ren = ()
        if self.wind:
            ren = (RenewableUnit(2, self.wind_cap, self.gen_cost if self.wind_cost is None else self.wind_cost),)
        return NetworkInstance(
            buses=(Bus(1, 1, 0.0), Bus(2, 2, float(max(self.demand)))),
            branches=(Branch(1, 2, self.reactance, self.line_limit),),
            generators=(gen,),
            renewables=ren,
            demand=demand,
            period_hours=1.0,
            angle_limit=self.angle_limit,
            shed_cost=np.full((2, self.T), self.shed_cost),
            base_mva=self.base_mva,
            name=self.name,
            defaults=NetworkDefaults(),
        )

    def fleet(self) -> TransitFleet:
        bus = TransitBus("bus1", self.battery_min, self.battery_max, self.initial_level, self.charge_rate,
                         self.discharge_rate, 1.0, self.consumption, self.schedule)
        n = len(self.stations)
        steps = np.full((n, n), self.travel_steps, dtype=int)
        np.fill_diagonal(steps, 0)
        return TransitFleet((bus,), StationMap(tuple(self.stations), steps))

    def scenario_set(self) -> ScenarioSet:
        avail = np.array(self.wind, dtype=float)[:, None, :]
        return ScenarioSet(avail, np.array(self.probabilities, dtype=float))

    def price_set(self) -> PriceSet:
        second = self.price_second() if self.wind else None
        return PriceSet(self.price_first(), second, "peak")


def micro2(**changes) -> TwoNodeInstance:
    """The shared two-bus instance: 1 MW load for four periods and a full battery."""
    return replace(TwoNodeInstance("micro2", demand=(1.0, 1.0, 1.0, 1.0)), **changes)


def micro2_stochastic(**changes) -> TwoNodeInstance:
    """micro2 with a renewable unit at node 2 seeing 0.5 or 1.5 MW with equal probability."""
    base = micro2(name="micro2_stochastic", wind=((0.5,) * 4, (1.5,) * 4), probabilities=(0.5, 0.5))
    return replace(base, **changes)


def random_variant(seed: int) -> TwoNodeInstance:
    """A seeded three-period two-node instance with stations at both nodes."""
    rng = np.random.default_rng(seed)
    T = 3
    half = lambda lo, hi, size=None: rng.integers(int(lo * 2), int(hi * 2) + 1, size=size) / 2.0  # noqa: E731
    c = float(rng.integers(5, 16))
    emax = float(half(1.0, 2.0))
    e1 = float(half(0.0, emax))
    prices = rng.integers(2, 21, size=(2, T)).astype(float)
    second = rng.integers(2, 21, size=(2, T, 2)).astype(float)
    return TwoNodeInstance(
        name=f"random{seed}",
        demand=tuple(float(v) for v in half(0.5, 2.0, T)),
        gen_cost=c,
        ramp_limit=float(half(1.0, 2.0)),
        reserve_cap=2.0,
        ramp_up_cost=1.2 * c,
        ramp_down_cost=0.5 * c,
        line_limit=float(rng.choice([1.5, 2.0, 3.0])),
        shed_cost=10 * c,
        battery_max=emax,
        initial_level=e1,
        consumption=float(rng.choice([0.0, 0.5])),
        stations=(2, 1),
        prices=tuple(map(tuple, prices)),
        prices_second=tuple(tuple(map(tuple, row)) for row in second),
        wind_cap=1.5,
        wind=tuple(tuple(float(v) for v in half(0.0, 1.5, T)) for _ in range(2)),
        probabilities=(0.5, 0.5),
    )


INSTANCES = {
    "micro2": micro2,
    "micro2_stochastic": micro2_stochastic,
    "random2": lambda: random_variant(2),
    "random4": lambda: random_variant(4),
}


# -- enumeration -----------------------------------------------------------------------


def _units(v: float, step: float) -> int:
    n = round(v / step)
    if abs(n * step - v) > 1e-9:
        raise ValueError(f"{v} is not a multiple of the grid step {step}")
    return int(n)


@dataclass
class _Grid:
    inst: TwoNodeInstance
    h: float = field(init=False)

    def __post_init__(self):
        i = self.inst
        self.h = i.step
        u = lambda v: _units(v, self.h)  # noqa: E731
        self.d = [u(v) for v in i.demand]
        self.pmax, self.ramp, self.cap = u(i.gen_pmax), u(i.ramp_limit), u(i.reserve_cap)
        self.line = u(i.line_limit) if math.isfinite(i.line_limit) else 10**9
        self.angle_flow = i.angle_limit * i.base_mva / i.reactance  # |flow| allowed by the angle limit
        self.emin, self.emax, self.e1 = u(i.battery_min), u(i.battery_max), u(i.initial_level)
        self.rc, self.rd, self.s = u(i.charge_rate), u(i.discharge_rate), u(i.consumption)
        self.rcap = u(i.wind_cap)
        self.wind = [[u(v) for v in row] for row in i.wind]
        self.seq = [t - 1 for t in i.schedule]
        if self.seq != list(range(self.seq[0], self.seq[0] + len(self.seq))):
            raise ValueError("oracle instances need an off-schedule that does not wrap")

    def mw(self, n: int) -> float:
        return n * self.h

    def flow_ok(self, flow: int) -> bool:
        return abs(flow) <= self.line and abs(self.mw(flow)) <= self.angle_flow + 1e-12


def _location_sequences(g: _Grid):
    """Legal location sequences over the off-schedule: station index or None (relocating)."""
    inst = g.inst
    K = len(inst.stations)
    for seq in itertools.product(list(range(K)) + [None], repeat=len(g.seq) - 1):
        locs = [0] + list(seq)
        ok = True
        placed = [(p, k) for p, k in enumerate(locs) if k is not None]
        for a in range(len(placed)):
            for b in range(a + 1, len(placed)):
                (p1, k1), (p2, k2) = placed[a], placed[b]
                if k1 != k2 and p2 - p1 <= inst.travel_steps:
                    ok = False
        if ok:
            yield locs


def solve_oracle(inst: TwoNodeInstance, kind: str) -> float:
    """Optimal objective of ``kind`` in {"det", "ramp2ssp", "charge2ssp", "transit"}; ``inf`` if infeasible."""
    g = _Grid(inst)
    if kind not in ("det", "ramp2ssp", "charge2ssp", "transit"):
        raise ValueError(kind)
    if kind != "det" and kind != "transit" and not inst.wind:
        raise ValueError("stochastic oracles need wind scenarios")
    best = math.inf
    for locs in _location_sequences(g):
        best = min(best, _dp(g, kind, locs))
    return best


def _dp(g: _Grid, kind: str, locs: list) -> float:
    inst = g.inst
    a = inst.alpha
    T = inst.T
    P1 = inst.price_first()
    P2 = inst.price_second()
    S = len(inst.wind) if kind in ("ramp2ssp", "charge2ssp") else 0
    probs = inst.probabilities
    R = S if kind == "charge2ssp" else 1
    crw = inst.gen_cost if inst.wind_cost is None else inst.wind_cost
    power = kind != "transit"
    w_obj = 1.0 if kind == "transit" else a
    g_obj = 1.0 - a
    first, last = g.seq[0], g.seq[-1]

    second_cache: dict = {}

    def ramp_second(t, pg, pr, flow):
        key = (t, pg, pr, flow)
        if key in second_cache:
            return second_cache[key]
        rup = min(g.cap, g.pmax - pg)
        rdn = min(g.cap, pg)
        total = 0.0
        for w in range(S):
            best = math.inf
            for prs in range(0, g.wind[w][t] + 1):
                for ru in range(0, rup + 1):
                    for rd in range(0, rdn + 1):
                        shed = pr - prs - ru + rd
                        if not 0 <= shed <= g.d[t] or not g.flow_ok(flow + ru - rd):
                            continue
                        c = crw * g.mw(prs) + inst.shed_cost * g.mw(shed) + inst.ramp_up_cost * g.mw(ru) \
                            - inst.ramp_down_cost * g.mw(rd)
                        best = min(best, c)
            if best == math.inf:
                second_cache[key] = math.inf
                return math.inf
            total += probs[w] * g_obj * best
        second_cache[key] = total
        return total

    # state: (prev_pg or None, levels tuple or None) -> cost
    states = {(None, None): 0.0}
    for t in range(T):
        on = first <= t <= last
        p = t - first
        loc = locs[p] if on else None
        node = inst.stations[loc] - 1 if loc is not None else None
        u_opts = range(-g.rd, g.rc + 1) if loc is not None else [0]
        pr_opts = range(0, g.rcap + 1) if kind in ("ramp2ssp", "charge2ssp") else [0]
        consume = g.s if (on and loc is None) else 0
        new: dict = {}
        for (prev, levels), cost in states.items():
            if on and t == first:
                levels = (g.e1,) * R
            if on and any(not g.emin <= e <= g.emax for e in levels):
                continue
            for u in u_opts:
                q = [0, 0]
                if node is not None:
                    q[node] = u
                charge_cost = w_obj * P1[node, t] * g.mw(u) if node is not None else 0.0
                for pr in pr_opts:
                    if power:
                        pg = g.d[t] + q[0] + q[1] - pr
                        if not 0 <= pg <= g.pmax:
                            continue
                        if prev is not None and abs(pg - prev) > g.ramp:
                            continue
                        flow = pg - q[0]
                        if not g.flow_ok(flow):
                            continue
                        c1 = g_obj * (inst.gen_cost * g.mw(pg) + inst.gen_quad * g.mw(pg) ** 2)
                    else:
                        pg, flow, c1 = None, 0, 0.0
                    base = cost + c1 + charge_cost
                    if kind == "ramp2ssp":
                        base += ramp_second(t, pg, pr, flow)
                        if base == math.inf:
                            continue
                    if kind != "charge2ssp":
                        nxt = None
                        if on:
                            e = levels[0] + u - consume
                            if t == last:
                                if e != g.emax:
                                    continue
                            else:
                                nxt = (e,)
                        key = (pg, nxt)
                        if base < new.get(key, math.inf):
                            new[key] = base
                        continue
                    # charging recourse: per-scenario net extra charge v at the connected node
                    pc, pdc = max(u, 0), max(-u, 0)
                    v_opts = range(-(g.rd - pdc), g.rc - pc + 1) if node is not None else [0]
                    per_w = []
                    for w in range(S):
                        opts = {}
                        for v in v_opts:
                            qv = [0, 0]
                            if node is not None:
                                qv[node] = v
                            if not g.flow_ok(flow - qv[0]):
                                continue
                            bestc = math.inf
                            for prs in range(0, g.wind[w][t] + 1):
                                shed = pr + qv[0] + qv[1] - prs
                                if 0 <= shed <= g.d[t]:
                                    bestc = min(bestc, g_obj * (crw * g.mw(prs) + inst.shed_cost * g.mw(shed)))
                            if bestc == math.inf:
                                continue
                            price = P2[node, t, w] if node is not None else 0.0
                            c = probs[w] * (bestc + a * price * g.mw(v))
                            if on:
                                e = levels[w] + u + v - consume
                                if t == last and e != g.emax:
                                    continue
                                nx = None if t == last else e
                            else:
                                nx = None
                            if c < opts.get(nx, math.inf):
                                opts[nx] = c
                        if not opts:
                            break
                        per_w.append(opts)
                    if len(per_w) != S:
                        continue
                    for combo in itertools.product(*[list(o.items()) for o in per_w]):
                        lv = tuple(nx for nx, _ in combo)
                        c = base + sum(c for _, c in combo)
                        key = (pg, None if not on or t == last else lv)
                        if c < new.get(key, math.inf):
                            new[key] = c
        states = new
        if not states:
            return math.inf
    return min(states.values())
