"""Example 03

Plan the binary problem with theta = pi/3, H = 3, N = 400, then execute
10000 episodes
Output: value at the prior, Monte Carlo summary and operation counters
"""
from math import pi

from sqsdplan.qsd.cases import BinaryScenario
from sqsdplan.qsd.counters import CostCounters
from sqsdplan.qsd.executor import monte_carlo
from sqsdplan.qsd.planner import plan, value_at

scn = BinaryScenario(pi / 3, library_size=90, c_meas=0.01, horizon=3, resolution=400)
cfg = scn.config()
counters = CostCounters()
values, policy = plan(cfg, counters)
print(f"V0(prior) = {value_at(cfg.prior, 0, values):.6f}")
summary, tau = monte_carlo(cfg, (values, policy), 10_000, seed=1)
print(summary.report())
print(counters.report())
