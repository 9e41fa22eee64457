"""Watch individual cut-in episodes unfold under the IDM follower, then map
where the crash region sits for one vehicle model.

Run from the repository root:  python3 demos/02_cutin_episodes.py
Runtime: about a second.
"""

import numpy as np

from fewshot_testing.config import build_exposure_model, default_config
from fewshot_testing.cutin_sim import EpisodeConfig, rasterize_outcomes, simulate_episode
from fewshot_testing.model_set import default_model_set
from fewshot_testing.scenario_space import Scenario, build_grid

cfg = default_config()
episode = EpisodeConfig()
model = default_model_set().get("AV-1")
print(f"subject model: {model.name}")
print(f"  time headway       {model.idm.time_headway} s")
print(f"  comfortable decel  {model.idm.comfortable_decel} m/s^2")

for scenario in (Scenario(30.0, -5.0), Scenario(7.0, -8.0)):
    result = simulate_episode(scenario, model.idm, episode)
    verdict = (
        f"CRASH at t = {result.crash_time_s:.1f} s" if result.crashed else "no crash"
    )
    print(f"\ncut-in at r = {scenario.range_m} m, rdot = {scenario.range_rate_mps} m/s"
          f" -> {verdict}")
    print("    t [s]   gap [m]   follower speed [m/s]")
    for i in range(0, result.times_s.size, 10):
        print(f"    {result.times_s[i]:5.1f}   {result.gaps_m[i]:7.2f}"
              f"   {result.follower_speeds_mps[i]:8.2f}")
    print(f"    minimum gap over the horizon: {result.min_gap_m:.2f} m")

# The full picture: simulate every cell at once and find, for a few closing
# speeds, the largest initial range that still ends in a crash.
grid = build_grid(
    cfg["space"]["r_steps"], cfg["space"]["rdot_steps"], build_exposure_model(cfg)
)
pmap = rasterize_outcomes(grid, model.idm, episode, label=model.name)
print(f"\ncrash boundary for {model.name} (largest crashing range per closing speed):")
for rdot in (-15.0, -10.0, -5.0, -2.0, 0.0):
    col = np.isclose(grid.rdot, rdot)
    crashing = grid.r[col & (pmap.values == 1.0)]
    if crashing.size:
        print(f"  rdot = {rdot:+5.1f} m/s  ->  crash for r <= {crashing.max():4.1f} m")
    else:
        print(f"  rdot = {rdot:+5.1f} m/s  ->  no crash at any range")
print(f"\nexposure-weighted crash rate of {model.name}: {pmap.rate():.6e}")
print("\ndone")
