"""
OSTB against ALAP
=================

Same harvest, same seeds, two schedulers.
"""

from ostb.energy import HarvestModel, table_one
from ostb.mdp import build_mdp
from ostb.simulator import Scheduler, SimConfig, compare, with_scheduler
from ostb.solver import solve

p = table_one()
for hi in (1e-3, 3e-3):
    h = HarvestModel.uniform(0.0, hi)
    model = build_mdp(p, h)
    ostb = Scheduler.ostb(solve(model).policy, model)
    cfg = SimConfig(p, h, ostb, 500.0, seed=1)
    res = compare(cfg, with_scheduler(cfg, Scheduler("alap")), replications=4)
    print(f"U[0,{hi * 1e3:g}] mA")
    for name in ("ostb", "alap"):
        r = res[name]
        print(f"  {name:5s} completion {r['completion_rate']['mean']:.3f}"
              f"  failures {r['sensing_failures']['mean'] + r['transmit_failures']['mean']:.1f}"
              f"  latency {r['latency_seconds']['mean']:.1f} s")
    print("  improvement", res["improvement"])
