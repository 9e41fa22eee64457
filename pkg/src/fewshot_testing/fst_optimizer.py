"""Optimizing a fixed few-shot test set against the surrogate vertices.

Scenario coordinates move by projected gradient descent in the normalized
unit square (clamped after every step). Each step re-fuses the candidate
set, recomputes the worst vertex, and descends

    objective = mismatch_weight * certified_loss + |fluctuation|

where the certified loss is the worst vertex's absolute fused-rate error
and the fluctuation term re-fuses the worst vertex's outcome differences
between every grid cell and each query's nearest cell. With an infinite
mismatch weight the fluctuation term is dropped and the objective is the
certified loss alone. Multiple restarts sample fresh initial sets from the
training clusters; the final iterate with the lowest objective wins (ties
keep the earliest restart).

Scenario outcomes are looked up at the nearest grid cell each step, so
outcome terms are piecewise constant in the coordinates; gradients flow
through the similarity weights only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .cutin_sim import EpisodeConfig, IdmParams, PerformanceMap, simulate_episode
from .errors import ArtifactError, ConfigError, NumericalError
from .fst_trainer import certified_loss, sample_fst_set
from .scenario_space import (
    Scenario,
    ScenarioGrid,
    denormalize_coords,
    nearest_cell,
    normalize_coords,
)
from .seeding import make_rng
from .similarity_net import NetParams, encode, fuse, fuse_backward

__all__ = [
    "OptimizeConfig",
    "FstPlan",
    "fluctuation",
    "assess_candidate",
    "optimize",
    "execute_plan",
    "verify_plan",
    "save_plan",
    "load_plan",
    "write_similarity_csv",
]


@dataclass(frozen=True)
class OptimizeConfig:
    """Projected-gradient search hyperparameters."""

    n: int = 10
    steps: int = 300
    learning_rate: float = 0.02
    restarts: int = 8
    mismatch_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be positive")
        if self.restarts < 1:
            raise ConfigError("restarts must be at least 1")
        if not self.mismatch_weight > 0.0:
            raise ConfigError("mismatch_weight must be positive (inf allowed)")


@dataclass
class FstPlan:
    """A fixed, optimized test set with its certified error bound.

    ``certified_loss`` bounds the absolute estimation error of
    ``execute_plan`` for any model in the convex hull of the surrogate
    vertices. ``weights`` are the fusion weights applied to per-scenario
    outcomes; they sum to 1.
    """

    n: int
    mismatch_weight: float
    coords_norm: np.ndarray
    cell_indices: np.ndarray
    weights: np.ndarray
    certified_loss: float
    objective: float
    fluctuation: float
    argmax_vertex: int
    selected_restart: int
    restarts: list[dict] = field(default_factory=list)
    surrogate_names: list[str] = field(default_factory=list)
    seed_lineage: dict = field(default_factory=dict)
    config_hash: str = ""
    similarity_csv: str = ""

    def scenarios(self):
        """Raw-coordinate (r, rdot) pairs of the planned scenarios."""
        r, rdot = denormalize_coords(self.coords_norm[:, 0], self.coords_norm[:, 1])
        return np.column_stack([r, rdot])


def fluctuation(
    similarity: np.ndarray,
    exposure: np.ndarray,
    cell_values: np.ndarray,
    query_values: np.ndarray,
) -> np.ndarray:
    """Per-scenario fluctuation of one outcome map around the planned set.

    For scenario ``i``, averages the outcome difference between every grid
    cell and the scenario's own cell under the scenario's similarity row:

        F_i = sum_j (P_j - P_i) * S_ij * p_j / sum_j S_ij * p_j

    The denominator is exactly the scenario's fusion weight, so the
    weight-averaged fluctuation ``F @ w`` telescopes to the gap between the
    map's exposure-weighted rate and its fused estimate.
    """
    similarity = np.asarray(similarity, dtype=float)
    weights = similarity @ np.asarray(exposure, dtype=float)
    if np.any(weights <= 0.0) or not np.all(np.isfinite(weights)):
        raise NumericalError("fluctuation denominator (fusion weight) must be positive")
    numer = ((np.asarray(cell_values, dtype=float)[None, :]
              - np.asarray(query_values, dtype=float)[:, None])
             * similarity * np.asarray(exposure, dtype=float)[None, :]).sum(axis=1)
    return numer / weights


def assess_candidate(u, params, key_features, grid, vertex_outcomes, vertex_rates, w_M):
    """Fuse a candidate set and score it; returns everything a step needs.

    ``fluctuation`` in the result is the weight-averaged per-scenario
    fluctuation of the worst vertex, computed as the raw double sum (the
    fusion weights cancel against the per-scenario denominators).
    """
    r, rdot = denormalize_coords(u[:, 0], u[:, 1])
    cells = nearest_cell(grid, r, rdot)
    tape = fuse(params, u, key_features, grid.exposure)
    outcomes = vertex_outcomes[:, cells]
    fused = outcomes @ tape.weights
    loss, a = certified_loss(fused, vertex_rates)
    query_outcomes = vertex_outcomes[a][cells]
    fluct = float(
        ((vertex_outcomes[a][None, :] - query_outcomes[:, None])
         * tape.similarity * grid.exposure[None, :]).sum()
    )
    objective = loss if np.isinf(w_M) else w_M * loss + abs(fluct)
    return {
        "cells": cells,
        "tape": tape,
        "outcomes": outcomes,
        "fused": fused,
        "certified": loss,
        "argmax": a,
        "query_outcomes": query_outcomes,
        "fluctuation": fluct,
        "objective": float(objective),
    }


def optimize(
    grid: ScenarioGrid,
    vertex_outcomes: np.ndarray,
    vertex_rates: np.ndarray,
    params: NetParams,
    assignments: np.ndarray,
    config: OptimizeConfig,
    master_seed: int,
    surrogate_names: list[str] | None = None,
) -> FstPlan:
    """Search for the test set minimizing the certified objective."""
    vertex_outcomes = np.atleast_2d(np.asarray(vertex_outcomes, dtype=float))
    vertex_rates = np.asarray(vertex_rates, dtype=float)
    if vertex_outcomes.shape[1] != grid.size:
        raise ConfigError("vertex outcomes do not match the grid")
    if vertex_outcomes.shape[0] != vertex_rates.shape[0]:
        raise ConfigError("vertex outcomes and rates disagree on vertex count")

    u_r, u_rdot = normalize_coords(grid.r, grid.rdot)
    all_coords = np.column_stack([u_r, u_rdot])
    key_features = encode(params, all_coords)
    p = grid.exposure
    k = int(assignments.max()) + 1
    w_M = config.mismatch_weight

    best = None
    restart_rows = []
    labels = []
    for rs in range(config.restarts):
        label = f"optimize/restart/{rs}"
        labels.append(label)
        rng = make_rng(master_seed, label)
        cells0 = sample_fst_set(assignments, k, config.n, rng)
        u = all_coords[cells0].copy()
        init_certified = None
        state = None
        failed = None
        for step in range(config.steps + 1):
            state = assess_candidate(
                u, params, key_features, grid, vertex_outcomes, vertex_rates, w_M
            )
            if not np.isfinite(state["objective"]):
                failed = f"objective not finite at step {step}"
                break
            if step == 0:
                init_certified = state["certified"]
            if step == config.steps:
                break
            a = state["argmax"]
            sign = np.sign(state["fused"][a] - vertex_rates[a])
            if np.isinf(w_M):
                dS = sign * state["outcomes"][a][:, None] * p[None, :]
            else:
                dS = w_M * sign * state["outcomes"][a][:, None] * p[None, :]
                dS += np.sign(state["fluctuation"]) * p[None, :] * (
                    vertex_outcomes[a][None, :] - state["query_outcomes"][:, None]
                )
            grads = fuse_backward(params, state["tape"], dS)
            u = np.clip(u - config.learning_rate * grads["d_query_coords"], 0.0, 1.0)
        if failed is not None:
            # A diverged restart is recorded and skipped, not fatal.
            restart_rows.append({"restart": rs, "label": label, "failed": failed})
            continue
        restart_rows.append(
            {
                "restart": rs,
                "label": label,
                "objective": state["objective"],
                "certified_loss": state["certified"],
                "init_certified_loss": float(init_certified),
            }
        )
        if best is None or state["objective"] < best[0]:
            best = (state["objective"], rs, u.copy(), state)

    if best is None:
        raise NumericalError("every optimization restart produced a non-finite objective")
    _, rs_best, u_best, state = best
    return FstPlan(
        n=config.n,
        mismatch_weight=w_M,
        coords_norm=u_best,
        cell_indices=np.asarray(state["cells"], dtype=int),
        weights=state["tape"].weights.copy(),
        certified_loss=state["certified"],
        objective=state["objective"],
        fluctuation=state["fluctuation"],
        argmax_vertex=state["argmax"],
        selected_restart=rs_best,
        restarts=restart_rows,
        surrogate_names=list(surrogate_names or []),
        seed_lineage={"master_seed": int(master_seed), "restart_labels": labels},
    )


def execute_plan(
    plan: FstPlan,
    subject: np.ndarray | PerformanceMap | IdmParams,
    episode: EpisodeConfig | None = None,
) -> float:
    """Estimate a subject's rate by running only the planned scenarios.

    ``subject`` may be a full per-cell outcome vector, a
    :class:`~fewshot_testing.cutin_sim.PerformanceMap` (outcomes read at the
    planned cells), or :class:`~fewshot_testing.cutin_sim.IdmParams`, in
    which case each planned scenario is simulated fresh at its exact stored
    coordinates under ``episode``.
    """
    if isinstance(subject, IdmParams):
        episode = episode or EpisodeConfig()
        outcomes = np.empty(plan.n, dtype=float)
        for i, (r, rdot) in enumerate(plan.scenarios()):
            try:
                result = simulate_episode(Scenario(float(r), float(rdot)), subject, episode)
            except Exception as exc:
                raise NumericalError(
                    f"episode for planned scenario {i} (r={r!r}, rdot={rdot!r}) failed: {exc}"
                ) from exc
            outcomes[i] = 1.0 if result.crashed else 0.0
        return float(outcomes @ plan.weights)
    if isinstance(subject, PerformanceMap):
        subject = subject.values
    subject = np.asarray(subject, dtype=float)
    if subject.ndim != 1 or subject.shape[0] <= plan.cell_indices.max():
        raise ConfigError("subject outcomes do not cover the planned cells")
    return float(subject[plan.cell_indices] @ plan.weights)


def verify_plan(
    plan: FstPlan,
    params: NetParams,
    grid: ScenarioGrid,
    vertex_outcomes: np.ndarray,
    vertex_rates: np.ndarray,
    tolerance: float = 1e-9,
) -> dict:
    """Recompute a plan's score from its stored coordinates and check it.

    Guards against stale or tampered plan artifacts: the recomputed
    certified loss, fusion weights, and cell indices must match the stored
    ones within ``tolerance`` or an :class:`ArtifactError` is raised.
    Returns the recomputed assessment.
    """
    vertex_outcomes = np.atleast_2d(np.asarray(vertex_outcomes, dtype=float))
    u_r, u_rdot = normalize_coords(grid.r, grid.rdot)
    key_features = encode(params, np.column_stack([u_r, u_rdot]))
    state = assess_candidate(
        plan.coords_norm, params, key_features, grid,
        vertex_outcomes, np.asarray(vertex_rates, dtype=float), plan.mismatch_weight,
    )
    if not np.array_equal(state["cells"], plan.cell_indices):
        raise ArtifactError("plan cell indices do not match its stored coordinates")
    if abs(state["certified"] - plan.certified_loss) > tolerance:
        raise ArtifactError(
            "plan certified loss does not reproduce: stored "
            f"{plan.certified_loss!r}, recomputed {state['certified']!r}"
        )
    if np.max(np.abs(state["tape"].weights - plan.weights)) > tolerance:
        raise ArtifactError("plan fusion weights do not reproduce from its coordinates")
    return state


def _weight_to_json(w: float):
    return "inf" if np.isinf(w) else float(w)


def save_plan(plan: FstPlan, path) -> None:
    """Serialize a plan to JSON (infinite mismatch weight encodes as "inf")."""
    doc = {
        "n": plan.n,
        "mismatch_weight": _weight_to_json(plan.mismatch_weight),
        "coords_norm": [[float(a), float(b)] for a, b in plan.coords_norm],
        "scenarios": [[float(a), float(b)] for a, b in plan.scenarios()],
        "cell_indices": [int(c) for c in plan.cell_indices],
        "weights": [float(w) for w in plan.weights],
        "certified_loss": plan.certified_loss,
        "objective": plan.objective,
        "fluctuation": plan.fluctuation,
        "argmax_vertex": plan.argmax_vertex,
        "selected_restart": plan.selected_restart,
        "restarts": plan.restarts,
        "surrogate_names": plan.surrogate_names,
        "seed_lineage": plan.seed_lineage,
        "config_hash": plan.config_hash,
        "similarity_csv": plan.similarity_csv,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_plan(path) -> FstPlan:
    """Load a plan written by :func:`save_plan`."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ArtifactError(f"plan artifact missing: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"plan artifact unreadable: {path}: {exc}") from exc
    try:
        return FstPlan(
            n=int(doc["n"]),
            mismatch_weight=float(doc["mismatch_weight"]),
            coords_norm=np.asarray(doc["coords_norm"], dtype=float),
            cell_indices=np.asarray(doc["cell_indices"], dtype=int),
            weights=np.asarray(doc["weights"], dtype=float),
            certified_loss=float(doc["certified_loss"]),
            objective=float(doc["objective"]),
            fluctuation=float(doc["fluctuation"]),
            argmax_vertex=int(doc["argmax_vertex"]),
            selected_restart=int(doc["selected_restart"]),
            restarts=list(doc.get("restarts", [])),
            surrogate_names=list(doc.get("surrogate_names", [])),
            seed_lineage=dict(doc.get("seed_lineage", {})),
            config_hash=str(doc.get("config_hash", "")),
            similarity_csv=str(doc.get("similarity_csv", "")),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ArtifactError(f"plan artifact inconsistent: {path}: {exc}") from exc


def write_similarity_csv(plan: FstPlan, params: NetParams, grid: ScenarioGrid, path) -> None:
    """Per-cell, per-query similarity as ``r,rdot,query_index,similarity``.

    Rows iterate grid cells in flat order with the query index innermost;
    each cell's similarities sum to 1 across queries.
    """
    key_features = encode(
        params, np.column_stack(normalize_coords(grid.r, grid.rdot))
    )
    tape = fuse(params, plan.coords_norm, key_features, grid.exposure)
    S = tape.similarity
    lines = ["r,rdot,query_index,similarity"]
    for kcell in range(grid.size):
        r = float(grid.r[kcell])
        rdot = float(grid.rdot[kcell])
        for qi in range(plan.n):
            lines.append(f"{r!r},{rdot!r},{qi},{float(S[qi, kcell])!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
