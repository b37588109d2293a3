"""
Bigger batteries on tight lines
===============================

All lines are capped at 10 MW and the buses' batteries grow. Planned
jointly, the fleet fills more line-hours; planned separately, it eventually
asks for power the network cannot deliver.
"""

from dataclasses import replace

from coopt.analysis import lmp_prices, run_capacity_sweep, run_congestion_sweep
from coopt.matpower import bundled_case_path, read_case
from coopt.network import build_network, bundled_profile
from coopt.transit import bundled_fleet_path, load_fleet_json

net = build_network(read_case(bundled_case_path("case9")), bundled_profile("demand"), 0.01)
fleet = load_fleet_json(bundled_fleet_path())
grid = [0.66, 5, 10, 20, 40, 80, 160]

prices, _ = lmp_prices(net.with_flow_limit(10.0))
cong = run_congestion_sweep(net, fleet, grid, 10.0, prices, scale_rates=True)
print("capacity MWh   joint   separate   (-1 = infeasible)")
for cap, c, n in zip(cong.capacities, cong.coop, cong.noncoop):
    print(f"{cap:>12g} {c:>7d} {n:>10d}")

base, _ = lmp_prices(replace(net, renewables=()))
sweep = run_capacity_sweep(net, fleet, grid[:5], base, scale_rates=True)
for p in sweep.points:
    print(f"{p.capacity:>6g} MWh: total {p.total:.4f} = generation {p.generation:.4f} + charging {p.charging:+.4f}")
