"""Full workflow in miniature: train the similarity network on the surrogate
fleet, search for a 10-scenario test plan, and check its certified bound.

Run from the repository root:  python3 demos/05_train_and_plan.py
Runtime: roughly 15 seconds (reduced training/search budgets).
"""

import numpy as np

from fewshot_testing.config import build_exposure_model, default_config
from fewshot_testing.fst_optimizer import OptimizeConfig, execute_plan, optimize
from fewshot_testing.fst_trainer import TrainConfig, train
from fewshot_testing.model_set import (
    build_performance_maps,
    default_model_set,
    validate_rates,
)
from fewshot_testing.scenario_space import build_grid

MASTER_SEED = 42

cfg = default_config()
grid = build_grid(
    cfg["space"]["r_steps"], cfg["space"]["rdot_steps"], build_exposure_model(cfg)
)
model_set = default_model_set()
maps = build_performance_maps(model_set, grid)
rates = validate_rates(maps)
surrogates = [m.name for m in model_set.surrogates()]
outcomes = np.stack([maps[n].values for n in surrogates])
vertex_rates = np.array([rates[n] for n in surrogates])

print("training the similarity network (60 epochs)...")
from fewshot_testing.similarity_net import NetConfig

result = train(grid, outcomes, vertex_rates, NetConfig(),
               TrainConfig(epochs=60), master_seed=MASTER_SEED)
print(f"  epoch-mean certified loss: first {result.loss_history[0]:.4f}, "
      f"last {result.loss_history[-1]:.4f}")

print("\nsearching for a 10-scenario plan (150 steps x 4 restarts)...")
plan = optimize(
    grid, outcomes, vertex_rates, result.params, result.assignments,
    OptimizeConfig(n=10, steps=150, restarts=4), MASTER_SEED,
    surrogate_names=surrogates,
)
best_init = min(r["init_certified_loss"] for r in plan.restarts if "failed" not in r)
print(f"  certified loss {plan.certified_loss:.4e}"
      f"  (best random start {best_init:.4e},"
      f" improvement x{best_init / plan.certified_loss:.2f})")
print(f"  worst surrogate vertex: {surrogates[plan.argmax_vertex]}")

print("\nthe plan (scenario -> fusion weight):")
for (r, rdot), w in zip(plan.scenarios(), plan.weights):
    print(f"  r = {r:6.2f} m, rdot = {rdot:+6.2f} m/s   w = {w:.4f}")
print(f"  weights sum to {plan.weights.sum():.12f}")

print("\ncertified bound check on 300 random members of the surrogate hull:")
rng = np.random.default_rng(MASTER_SEED)
lam = rng.dirichlet(np.ones(len(surrogates)), size=300)
worst = 0.0
for mix in lam:
    blended = mix @ outcomes
    err = abs(execute_plan(plan, blended) - float(blended @ grid.exposure))
    worst = max(worst, err)
print(f"  max member error {worst:.3e} <= certified {plan.certified_loss:.3e}: "
      f"{worst <= plan.certified_loss + 1e-12}")

print("\nestimates for the held-out subjects (10 scenarios each):")
for m in model_set.subjects():
    estimate = execute_plan(plan, maps[m.name])
    true = rates[m.name]
    print(f"  {m.name}: estimate {estimate:.3e}  true {true:.3e}"
          f"  |error| {abs(estimate - true):.3e}")
print("\ndone")
