"""
Solving the scheduling MDP
==========================

Table I parameters, uniform harvest on [0, 3] mA.
"""

from ostb.energy import HarvestModel, table_one
from ostb.mdp import build_mdp
from ostb.solver import solve, verify_unichain

p = table_one()
model = build_mdp(p, HarvestModel.uniform(0.0, 3e-3))
print(model.n_states, "states")

sol = solve(model)
print("LP gain ", sol.occupation.objective)
print("RVI gain", sol.rvi.gain)
print("tasks per interval", round(sol.report.tasks_per_interval, 4))

rec = verify_unichain(sol.policy, model)
print("closed classes:", rec.n_recurrent, " reset state recurrent:", rec.reset_in_recurrent)

# the policy is a voltage threshold per slot; None means never
t = sol.thresholds
print("sense thresholds   ", [t.sense[m] for m in sorted(t.sense)])
print("transmit thresholds", [t.transmit[m] for m in sorted(t.transmit)])
