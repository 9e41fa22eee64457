"""Tests for the projected-gradient search over fixed scenario sets."""

import json

import numpy as np
import pytest
from conftest import MASTER_SEED

from fewshot_testing.cutin_sim import EpisodeConfig
from fewshot_testing.errors import ArtifactError, ConfigError, NumericalError
from fewshot_testing.fst_optimizer import (
    OptimizeConfig,
    assess_candidate,
    execute_plan,
    fluctuation,
    load_plan,
    optimize,
    save_plan,
    verify_plan,
    write_similarity_csv,
)
from fewshot_testing.fst_trainer import sample_fst_set
from fewshot_testing.scenario_space import nearest_cell, normalize_coords
from fewshot_testing.seeding import make_rng
from fewshot_testing.similarity_net import encode, fuse


@pytest.fixture(scope="module")
def small_plan(grid, vertex_data, trained):
    """A short but real optimization run shared by the module's tests."""
    _, outcomes, rates = vertex_data
    config = OptimizeConfig(n=8, steps=25, restarts=2)
    return optimize(
        grid, outcomes, rates, trained.params, trained.assignments, config, MASTER_SEED
    )


@pytest.fixture(scope="module")
def init_only_plan(grid, vertex_data, trained):
    """steps=0: the best initial candidate wins without any descent."""
    _, outcomes, rates = vertex_data
    config = OptimizeConfig(n=6, steps=0, restarts=3)
    return optimize(
        grid, outcomes, rates, trained.params, trained.assignments, config, MASTER_SEED
    )


def test_optimize_config_validation():
    OptimizeConfig(steps=0)  # a pure best-of-initializations search is legal
    OptimizeConfig(mismatch_weight=float("inf"))
    for kwargs in (
        {"n": 0},
        {"steps": -1},
        {"learning_rate": 0.0},
        {"restarts": 0},
        {"mismatch_weight": 0.0},
        {"mismatch_weight": -1.0},
        {"mismatch_weight": float("nan")},
    ):
        with pytest.raises(ConfigError):
            OptimizeConfig(**kwargs)


def test_optimize_input_validation(grid, vertex_data, trained):
    _, outcomes, rates = vertex_data
    config = OptimizeConfig(n=4, steps=0, restarts=1)
    with pytest.raises(ConfigError):
        optimize(grid, outcomes[:, :-1], rates, trained.params,
                 trained.assignments, config, MASTER_SEED)
    with pytest.raises(ConfigError):
        optimize(grid, outcomes, rates[:-1], trained.params,
                 trained.assignments, config, MASTER_SEED)


def test_optimize_is_deterministic(grid, vertex_data, trained):
    _, outcomes, rates = vertex_data
    config = OptimizeConfig(n=5, steps=10, restarts=2)
    args = (grid, outcomes, rates, trained.params, trained.assignments, config)
    a = optimize(*args, MASTER_SEED)
    b = optimize(*args, MASTER_SEED)
    assert np.array_equal(a.coords_norm, b.coords_norm)
    assert np.array_equal(a.weights, b.weights)
    assert a.certified_loss == b.certified_loss
    assert a.selected_restart == b.selected_restart
    c = optimize(*args, MASTER_SEED + 1)
    assert not np.array_equal(a.coords_norm, c.coords_norm)


def test_plan_invariants(grid, small_plan):
    plan = small_plan
    assert plan.coords_norm.shape == (8, 2)
    assert np.all(plan.coords_norm >= 0.0) and np.all(plan.coords_norm <= 1.0)
    assert np.all(plan.weights > 0.0)
    assert abs(plan.weights.sum() - 1.0) <= 1e-12
    scenarios = plan.scenarios()
    assert np.array_equal(
        nearest_cell(grid, scenarios[:, 0], scenarios[:, 1]), plan.cell_indices
    )
    # mismatch_weight = 1, so the objective is certified loss + |fluctuation|
    assert plan.objective == pytest.approx(
        plan.certified_loss + abs(plan.fluctuation), abs=1e-15
    )
    assert plan.seed_lineage["master_seed"] == MASTER_SEED
    assert plan.seed_lineage["restart_labels"] == [
        "optimize/restart/0",
        "optimize/restart/1",
    ]
    assert 0 <= plan.selected_restart < 2
    assert len(plan.restarts) == 2
    for row in plan.restarts:
        assert {"restart", "label", "objective",
                "certified_loss", "init_certified_loss"} <= set(row)


def test_zero_steps_keeps_initial_candidates(init_only_plan):
    plan = init_only_plan
    for row in plan.restarts:
        assert row["certified_loss"] == row["init_certified_loss"]
    objectives = [row["objective"] for row in plan.restarts]
    assert plan.selected_restart == int(np.argmin(objectives))
    assert plan.objective == min(objectives)


def test_infinite_mismatch_weight_drops_fluctuation_term(grid, vertex_data, trained):
    _, outcomes, rates = vertex_data
    config = OptimizeConfig(n=5, steps=5, restarts=2, mismatch_weight=float("inf"))
    plan = optimize(
        grid, outcomes, rates, trained.params, trained.assignments, config, MASTER_SEED
    )
    assert np.isinf(plan.mismatch_weight)
    assert plan.objective == plan.certified_loss


def test_fluctuation_matches_fused_estimation_gap(grid, vertex_data, trained, small_plan):
    """The weighted per-scenario fluctuation telescopes to (true - fused)."""
    _, outcomes, rates = vertex_data
    coords = np.column_stack(normalize_coords(grid.r, grid.rdot))
    keys = encode(trained.params, coords)
    state = assess_candidate(
        small_plan.coords_norm, trained.params, keys, grid, outcomes, rates, 1.0
    )
    a = state["argmax"]
    per_scenario = fluctuation(
        state["tape"].similarity, grid.exposure, outcomes[a], state["query_outcomes"]
    )
    averaged = float(per_scenario @ state["tape"].weights)
    assert averaged == pytest.approx(state["fluctuation"], rel=1e-10, abs=1e-14)
    gap = float(outcomes[a] @ grid.exposure) - float(state["fused"][a])
    assert averaged == pytest.approx(gap, rel=1e-10, abs=1e-12)


def test_fluctuation_rejects_vanishing_weights():
    similarity = np.zeros((2, 4))
    exposure = np.full(4, 0.25)
    with pytest.raises(NumericalError):
        fluctuation(similarity, exposure, np.ones(4), np.ones(2))


def test_execute_plan_accepts_vector_map_and_simulator(init_only_plan, grid, fleet):
    plan = init_only_plan  # steps=0 keeps scenarios exactly on grid cells
    pmap = fleet["maps"]["AV-2"]
    est_vector = execute_plan(plan, pmap.values)
    est_map = execute_plan(plan, pmap)
    assert est_vector == est_map
    spec = fleet["model_set"].get("AV-2")
    est_sim = execute_plan(plan, spec.idm, EpisodeConfig())
    assert est_sim == est_vector
    with pytest.raises(ConfigError):
        execute_plan(plan, np.zeros(3))


def test_hull_member_error_is_bounded_by_certified_loss(small_plan, grid, vertex_data):
    _, outcomes, _ = vertex_data
    rng = np.random.default_rng(7)
    mixtures = rng.dirichlet(np.ones(outcomes.shape[0]), size=200)
    for lam in mixtures:
        blended = lam @ outcomes
        true_rate = float(blended @ grid.exposure)
        err = abs(execute_plan(small_plan, blended) - true_rate)
        assert err <= small_plan.certified_loss + 1e-12


def test_verify_plan_passes_and_rejects_tampering(
    tmp_path, small_plan, trained, grid, vertex_data
):
    _, outcomes, rates = vertex_data
    state = verify_plan(small_plan, trained.params, grid, outcomes, rates)
    assert state["certified"] == pytest.approx(small_plan.certified_loss, abs=1e-12)

    path = tmp_path / "plan.json"
    save_plan(small_plan, path)

    tampered = load_plan(path)
    tampered.certified_loss += 1e-6
    with pytest.raises(ArtifactError):
        verify_plan(tampered, trained.params, grid, outcomes, rates)

    tampered = load_plan(path)
    tampered.weights = tampered.weights.copy()
    tampered.weights[0] += 1e-6
    with pytest.raises(ArtifactError):
        verify_plan(tampered, trained.params, grid, outcomes, rates)

    tampered = load_plan(path)
    tampered.cell_indices = tampered.cell_indices.copy()
    tampered.cell_indices[0] = (tampered.cell_indices[0] + 1) % grid.size
    with pytest.raises(ArtifactError):
        verify_plan(tampered, trained.params, grid, outcomes, rates)


def test_save_load_roundtrip_is_exact_and_stable(tmp_path, small_plan):
    path = tmp_path / "plan.json"
    save_plan(small_plan, path)
    loaded = load_plan(path)
    assert np.array_equal(loaded.coords_norm, small_plan.coords_norm)
    assert np.array_equal(loaded.cell_indices, small_plan.cell_indices)
    assert np.array_equal(loaded.weights, small_plan.weights)
    assert loaded.certified_loss == small_plan.certified_loss
    assert loaded.objective == small_plan.objective
    assert loaded.fluctuation == small_plan.fluctuation
    assert loaded.argmax_vertex == small_plan.argmax_vertex
    assert loaded.selected_restart == small_plan.selected_restart
    assert loaded.restarts == small_plan.restarts
    assert loaded.seed_lineage == small_plan.seed_lineage
    first = path.read_bytes()
    save_plan(loaded, path)
    assert path.read_bytes() == first


def test_save_load_preserves_infinite_mismatch_weight(
    tmp_path, grid, vertex_data, trained
):
    _, outcomes, rates = vertex_data
    config = OptimizeConfig(n=4, steps=0, restarts=1, mismatch_weight=float("inf"))
    plan = optimize(
        grid, outcomes, rates, trained.params, trained.assignments, config, MASTER_SEED
    )
    path = tmp_path / "plan.json"
    save_plan(plan, path)
    assert json.loads(path.read_text())["mismatch_weight"] == "inf"
    assert np.isinf(load_plan(path).mismatch_weight)


def test_load_plan_error_paths(tmp_path, small_plan):
    with pytest.raises(ArtifactError):
        load_plan(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ArtifactError):
        load_plan(bad)
    path = tmp_path / "plan.json"
    save_plan(small_plan, path)
    doc = json.loads(path.read_text())
    del doc["weights"]
    path.write_text(json.dumps(doc))
    with pytest.raises(ArtifactError):
        load_plan(path)


def test_write_similarity_csv_layout(tmp_path, small_plan, trained, grid):
    path = tmp_path / "similarity.csv"
    write_similarity_csv(small_plan, trained.params, grid, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "r,rdot,query_index,similarity"
    assert len(lines) == 1 + grid.size * small_plan.n
    first = lines[1].split(",")
    assert float(first[0]) == grid.r[0]
    assert float(first[1]) == grid.rdot[0]
    assert first[2] == "0"
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    sims = data[:, 3].reshape(grid.size, small_plan.n)
    assert np.allclose(sims.sum(axis=1), 1.0, atol=1e-12)
    # and the values are exactly the fused similarity matrix, transposed
    keys = encode(trained.params, np.column_stack(normalize_coords(grid.r, grid.rdot)))
    tape = fuse(trained.params, small_plan.coords_norm, keys, grid.exposure)
    assert np.array_equal(sims, tape.similarity.T)


def test_failed_restart_is_recorded_and_skipped(grid, vertex_data, trained):
    """Poison the initial cells of restart 0 only; restart 1 must still win."""
    _, outcomes, rates = vertex_data
    k = int(trained.assignments.max()) + 1
    cells0 = sample_fst_set(
        trained.assignments, k, 6, make_rng(MASTER_SEED, "optimize/restart/0")
    )
    cells1 = sample_fst_set(
        trained.assignments, k, 6, make_rng(MASTER_SEED, "optimize/restart/1")
    )
    poison = next(c for c in cells0 if c not in set(cells1))
    poisoned = outcomes.copy()
    poisoned[:, poison] = np.nan
    # an infinite mismatch weight keeps the objective local to the planned
    # cells, so only restart 0 touches the poisoned value
    config = OptimizeConfig(n=6, steps=0, restarts=2, mismatch_weight=float("inf"))
    plan = optimize(
        grid, poisoned, rates, trained.params, trained.assignments, config, MASTER_SEED
    )
    assert plan.selected_restart == 1
    assert plan.restarts[0]["failed"] == "objective not finite at step 0"
    assert "objective" not in plan.restarts[0]
    assert "failed" not in plan.restarts[1]


def test_all_restarts_failing_raises(grid, vertex_data, trained):
    _, outcomes, rates = vertex_data
    poisoned = np.full_like(outcomes, np.nan)
    config = OptimizeConfig(n=4, steps=0, restarts=2)
    with pytest.raises(NumericalError):
        optimize(
            grid, poisoned, rates, trained.params, trained.assignments,
            config, MASTER_SEED,
        )
