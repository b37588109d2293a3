"""
A day on case9 with four electric buses
=======================================

Builds the bundled nine-bus network at 1 % of its MATPOWER load, attaches a
1 MW wind unit at node 4 and plans the fleet jointly with dispatch. Then the
same day is solved with two kinds of recourse against wind uncertainty.
"""

import numpy as np

from coopt.analysis import wind_shortfall, wind_utilization
from coopt.formulations import (
    build_charging_2ssp,
    build_deterministic,
    build_pricing_mpopf,
    build_ramping_2ssp,
    extract_prices,
    objective_terms,
    transit_net_charging,
)
from coopt.matpower import bundled_case_path, read_case
from coopt.model_ir import solve
from coopt.network import attach_renewable, build_network, bundled_profile
from coopt.scenarios import generate_scenarios
from coopt.transit import bundled_fleet_path, load_fleet_json

net = build_network(read_case(bundled_case_path("case9")), bundled_profile("demand"), 0.01)
net = attach_renewable(net, 4, 1.0)
fleet = load_fleet_json(bundled_fleet_path())
scen = generate_scenarios(bundled_profile("wind"), 10, 0.0236, 1.0, seed=0)
print(f"{net.n_nodes} nodes, {len(net.branches)} lines, peak load {net.demand.sum(axis=0).max():.2f} MW")

# Charging prices come from the duals of a fleet-free stochastic dispatch.
pm = build_pricing_mpopf(net, scen)
prices = extract_prices(pm, solve(pm))
print("first-stage price by hour at node 1:", np.round(prices.first_stage[0], 3))

# Joint plan without uncertainty.
det = build_deterministic(net, fleet, prices)
res = solve(det)
for name, term in objective_terms(det, res.x).items():
    print(f"  {name:>10}: {term['weighted']:+.4f}")
charging = transit_net_charging(det, res, net.n_nodes, net.periods)
print("fleet draw per hour (MW):", np.round(charging.sum(axis=0), 3))

# Two ways to absorb wind forecast errors.
for label, builder in (("ramping recourse", build_ramping_2ssp), ("charging recourse", build_charging_2ssp)):
    r = solve(builder(net, fleet, scen, prices))
    print(f"{label:>18}: objective {r.objective:.4f}, wind utilization {wind_utilization(r, scen):.4f}")
    if builder is build_charging_2ssp:
        print("   curtailed MWh by hour:", np.round(wind_shortfall(r, scen), 3))
