"""
The energy model
================

How likely is a task to finish before the capacitor drops below v_out?
"""

import numpy as np

from ostb.energy import HarvestModel, VoltageGrid, safety_probability, table_one

p = table_one()
grid = VoltageGrid.from_params(p)
harvest = HarvestModel.uniform(0.0, 3e-3)

# exact law of the harvested charge, by convolution on a lattice
sense = np.asarray(safety_probability("s", grid.levels, p, harvest))
send = np.asarray(safety_probability("t", grid.levels, p, harvest))

print(" level   V      P(sense ok)  P(transmit ok)")
for k in range(0, len(grid.levels), 3):
    print(f"{k:5d}  {grid.levels[k]:5.3f}  {sense[k]:11.4f}  {send[k]:13.4f}")

# transmitting lasts longer, so it needs more headroom
first = lambda pr: grid.levels[np.argmax(pr > 0.99)]
print("99% safe from", round(first(sense), 3), "V (sense) and",
      round(first(send), 3), "V (transmit)")
