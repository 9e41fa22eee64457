"""Tour of the scenario space: the (range, range-rate) grid and how likely
each cut-in scenario is under the exposure model.

Run from the repository root:  python3 demos/01_scenario_space.py
Runtime: well under a second.
"""

import numpy as np

from fewshot_testing.config import build_exposure_model, default_config
from fewshot_testing.scenario_space import (
    R_MAX,
    R_MIN,
    RDOT_MAX,
    RDOT_MIN,
    build_grid,
    nearest_cell,
)

cfg = default_config()
grid = build_grid(
    cfg["space"]["r_steps"], cfg["space"]["rdot_steps"], build_exposure_model(cfg)
)

print("scenario space")
print(f"  range          [{R_MIN}, {R_MAX}] m in {grid.r_steps} steps")
print(f"  range rate     [{RDOT_MIN}, {RDOT_MAX}] m/s in {grid.rdot_steps} steps")
print(f"  grid cells     {grid.size} (range index varies fastest)")
print(f"  exposure mass  {grid.exposure.sum():.15f} (renormalized to 1)")

order = np.argsort(grid.exposure)[::-1]
print("\nfive most likely cut-in scenarios:")
for k in order[:5]:
    print(
        f"  r = {grid.r[k]:5.1f} m   rdot = {grid.rdot[k]:+5.1f} m/s"
        f"   p = {grid.exposure[k]:.3e}"
    )

# A negative range rate means the gap is closing; mass concentrates around
# gentle highway cut-ins (r around 25-40 m, rdot near zero).
closing = grid.exposure[grid.rdot < 0.0].sum()
print(f"\nprobability the gap is closing at cut-in: {closing:.3f}")

print("\ncoarse exposure heat map (rows: rdot high->low, cols: r 0->90):")
chars = " .:-=+*#%@"
peak = grid.exposure.max()
for i_rdot in range(grid.rdot_steps - 1, -1, -5):
    row = ""
    for i_r in range(0, grid.r_steps, 4):
        p = grid.exposure[i_rdot * grid.r_steps + i_r]
        row += chars[min(int((p / peak) ** 0.5 * (len(chars) - 1)), len(chars) - 1)]
    label = grid.rdot[i_rdot * grid.r_steps]
    print(f"  {label:+6.1f} |{row}|")
print(f"         0 m {'':{grid.r_steps // 4 - 8}} 90 m")

# Arbitrary continuous measurements snap to their nearest cell.
k = int(nearest_cell(grid, 33.4, -1.26))
print(f"\nnearest cell to (r=33.4, rdot=-1.26): "
      f"(r={grid.r[k]}, rdot={grid.rdot[k]}), flat index {k}")
print("\ndone")
