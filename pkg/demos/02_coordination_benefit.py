"""
What coordination is worth
==========================

The grid operator and the transit agency plan separately: the operator
guesses a charging schedule, publishes prices, the agency re-plans against
them. Each guess is compared with the joint plan.
"""

from coopt.analysis import run_uncoordinated
from coopt.matpower import bundled_case_path, read_case
from coopt.network import build_network, bundled_profile
from coopt.transit import bundled_fleet_path, load_fleet_json

net = build_network(read_case(bundled_case_path("case9")), bundled_profile("demand"), 1.0)
fleet = load_fleet_json(bundled_fleet_path())

rep = run_uncoordinated(net, fleet, n_scenarios=20, seed=0)
print(f"joint plan total {rep.coordinated_total:.4f}")
for a in rep.anticipations[:5]:
    print(f"  guess {a.index + 1:>2}: operator {a.iso_objective:.4f}  agency {a.transit_objective:.4f}  total {a.total:.4f}")
print(f"guesses at least as costly as the joint plan: {rep.dominance_count()}/{len(rep.anticipations)}")
print(f"agency cost gap, joint vs separate: {rep.transit_relative_gap():.2e}")
