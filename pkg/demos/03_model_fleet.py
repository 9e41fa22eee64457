"""The model fleet: four surrogate designs spanning the plausible behavior
space, three held-out subjects inside it, and their crash-rate ladder.

Run from the repository root:  python3 demos/03_model_fleet.py
Runtime: about a second.
"""

import numpy as np

from fewshot_testing.config import build_exposure_model, default_config
from fewshot_testing.model_set import (
    build_performance_maps,
    default_model_set,
    validate_rates,
)
from fewshot_testing.scenario_space import build_grid

cfg = default_config()
grid = build_grid(
    cfg["space"]["r_steps"], cfg["space"]["rdot_steps"], build_exposure_model(cfg)
)
model_set = default_model_set()
maps = build_performance_maps(model_set, grid)
rates = validate_rates(maps)  # every rate must land in the rare-event band

print("model           role       headway  decel   crash rate")
for spec in model_set.models:
    print(
        f"{spec.name:<15} {spec.role:<10} {spec.idm.time_headway:5.2f} s"
        f"  {spec.idm.comfortable_decel:4.2f}   {rates[spec.name]:.6e}"
    )

print("\nall rates sit inside the rare-event band [5e-4, 5e-3]:",
      all(5e-4 <= r <= 5e-3 for r in rates.values()))

# Longer headways and weaker braking make a model more cautious in following
# but slower to recover a collapsing gap, so the rate ladder is monotone.
surrogate_rates = [rates[m.name] for m in model_set.surrogates()]
print("surrogate rates increase with (headway, weaker decel):",
      all(a < b for a, b in zip(surrogate_rates, surrogate_rates[1:])))

print("\ncrash-region disagreement between neighboring models (cells that differ):")
names = [m.name for m in model_set.models]
for a, b in zip(names, names[1:]):
    differing = int(np.sum(maps[a].values != maps[b].values))
    print(f"  {a:<6} vs {b:<6}: {differing:4d} of {grid.size}")

# The subjects sit strictly inside the surrogate envelope: each subject's
# crash region is contained between the mildest and severest surrogates.
mild, severe = maps["SM-1"].values, maps["SM-4"].values
for m in model_set.subjects():
    inside = bool(np.all(mild <= maps[m.name].values)
                  and np.all(maps[m.name].values <= severe))
    print(f"\n{m.name} crash region within the surrogate envelope: {inside}")
print("\ndone")
