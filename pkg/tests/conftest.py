"""Shared fixtures: the default grid, the rasterized model fleet, and one
fully trained similarity network (the expensive pieces are session-scoped).

The terminal summary prints one PASS/FAIL line per acceptance criterion so
the gate can be read off the bottom of the pytest output.
"""

import numpy as np
import pytest

from fewshot_testing.config import build_exposure_model, default_config
from fewshot_testing.eval_harness import EvalContext
from fewshot_testing.fst_trainer import TrainConfig, train
from fewshot_testing.model_set import (
    build_performance_maps,
    default_model_set,
    validate_rates,
)
from fewshot_testing.scenario_space import build_grid
from fewshot_testing.similarity_net import NetConfig

MASTER_SEED = 42


@pytest.fixture(scope="session")
def grid():
    return build_grid(91, 61, build_exposure_model(default_config()))


@pytest.fixture(scope="session")
def fleet(grid):
    """Default model set rasterized over the default grid, with gated rates."""
    model_set = default_model_set()
    maps = build_performance_maps(model_set, grid)
    rates = validate_rates(maps)
    return {"model_set": model_set, "maps": maps, "rates": rates}


@pytest.fixture(scope="session")
def vertex_data(fleet):
    """(names, outcomes (s, N), rates (s,)) for the surrogate vertices."""
    model_set = fleet["model_set"]
    names = [m.name for m in model_set.surrogates()]
    outcomes = np.stack([fleet["maps"][n].values for n in names])
    rates = np.array([fleet["rates"][n] for n in names])
    return names, outcomes, rates


@pytest.fixture(scope="session")
def subject_data(fleet):
    """(names, outcomes (m, N), rates (m,)) for the subject models."""
    model_set = fleet["model_set"]
    names = [m.name for m in model_set.subjects()]
    outcomes = np.stack([fleet["maps"][n].values for n in names])
    rates = np.array([fleet["rates"][n] for n in names])
    return names, outcomes, rates


@pytest.fixture(scope="session")
def trained(grid, vertex_data):
    """Full default training run (200 epochs, master seed 42)."""
    _, outcomes, rates = vertex_data
    return train(grid, outcomes, rates, NetConfig(), TrainConfig(), master_seed=MASTER_SEED)


@pytest.fixture(scope="session")
def eval_ctx(grid, vertex_data, subject_data, trained):
    s_names, s_outcomes, s_rates = subject_data
    _, v_outcomes, v_rates = vertex_data
    return EvalContext(
        grid=grid,
        subject_names=s_names,
        subject_outcomes=s_outcomes,
        subject_rates=s_rates,
        vertex_outcomes=v_outcomes,
        vertex_rates=v_rates,
        params=trained.params,
        assignments=trained.assignments,
        fst_steps=300,
        fst_restarts=4,
        fst_learning_rate=0.02,
        fst_mismatch_weight=1.0,
    )


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, ()):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            status = "PASS" if outcome == "passed" else "FAIL"
            if results.get(name) != "FAIL":
                results[name] = status
    if results:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name in sorted(results):
            terminalreporter.write_line(f"ACCEPTANCE {name}: {results[name]}")
