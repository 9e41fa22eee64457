"""Pipeline stages behind the CLI subcommands.

Each stage reads its inputs from the artifact directory (never recomputes
an upstream stage), writes its own artifacts, and records them in
``manifest.json`` together with a sha256 of the config sections it
consumed. All writers are deterministic: rerunning a stage with the same
config and master seed reproduces every byte.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from . import __version__
from .config import (
    build_exposure_model,
    build_model_set,
    build_net_config,
    build_optimize_config,
    build_train_config,
    parse_weight,
    stage_config_hash,
)
from .cutin_sim import read_performance_csv, write_performance_csv
from .errors import ArtifactError
from .eval_harness import (
    EvalContext,
    ablation_experiment,
    bound_experiment,
    compare_methods,
    cross_n_experiment,
)
from .fst_optimizer import (
    execute_plan,
    load_plan,
    optimize,
    save_plan,
    verify_plan,
    write_similarity_csv,
)
from .fst_trainer import train, write_clusters_csv, write_loss_csv
from .model_set import build_performance_maps, validate_rates
from .scenario_space import build_grid, read_exposure_csv, write_exposure_csv
from .similarity_net import load_net, save_net

__all__ = [
    "run_prepare",
    "run_train",
    "run_optimize",
    "run_execute",
    "run_evaluate",
    "run_report",
]

_VARIANCE_NOTE = (
    "variance is the population variance of per-trial estimates around their "
    "own mean; the alternative reading (mean squared error about the true "
    "rate) equals variance plus squared bias and is not what the variance "
    "column reports"
)


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest_path(out_dir: str) -> str:
    return os.path.join(out_dir, "manifest.json")


def _read_manifest(out_dir: str) -> dict:
    path = _manifest_path(out_dir)
    if not os.path.exists(path):
        return {"package_version": __version__, "stages": {}}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"manifest unreadable: {path}: {exc}") from exc


def _record_stage(out_dir: str, stage: str, cfg: dict, sections: tuple[str, ...],
                  artifact_names: list[str]) -> None:
    manifest = _read_manifest(out_dir)
    manifest["package_version"] = __version__
    manifest["stages"][stage] = {
        "config_sha256": stage_config_hash(cfg, sections),
        "master_seed": int(cfg["seed"]),
        "artifacts": {
            name: _sha256_file(os.path.join(out_dir, name)) for name in sorted(artifact_names)
        },
    }
    with open(_manifest_path(out_dir), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _verify_artifact(out_dir: str, rel: str) -> None:
    """Refuse to consume an artifact whose bytes differ from the manifest.

    Artifacts never recorded (or a missing manifest) pass; stages that
    read them still validate their contents on parse.
    """
    manifest = _read_manifest(out_dir)
    for entry in manifest["stages"].values():
        recorded = entry.get("artifacts", {}).get(rel)
        if recorded is None:
            continue
        path = os.path.join(out_dir, rel)
        if not os.path.exists(path):
            raise ArtifactError(f"artifact missing: {rel} (rerun the producing stage)")
        actual = _sha256_file(path)
        if actual != recorded:
            raise ArtifactError(
                f"artifact hash mismatch for {rel}: manifest records {recorded}, "
                f"file is {actual} (rerun the producing stage)"
            )
        return


def _write_json(path: str, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _read_json(path: str, what: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ArtifactError(f"{what} artifact missing: {path} (run the producing stage first)") from exc
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{what} artifact unreadable: {path}: {exc}") from exc


def _load_grid(cfg: dict, out_dir: str):
    path = os.path.join(out_dir, "exposure.csv")
    if not os.path.exists(path):
        raise ArtifactError(f"exposure artifact missing: {path} (run prepare first)")
    _verify_artifact(out_dir, "exposure.csv")
    grid = read_exposure_csv(path)
    if grid.r_steps != int(cfg["space"]["r_steps"]) or grid.rdot_steps != int(
        cfg["space"]["rdot_steps"]
    ):
        raise ArtifactError(
            "exposure.csv grid does not match the config; rerun prepare"
        )
    return grid


def _load_maps(cfg: dict, out_dir: str, grid, names) -> dict:
    maps = {}
    for name in names:
        rel = os.path.join("maps", f"{name}.csv")
        path = os.path.join(out_dir, rel)
        if not os.path.exists(path):
            raise ArtifactError(f"performance map missing: {path} (run prepare first)")
        _verify_artifact(out_dir, rel)
        maps[name] = read_performance_csv(path, grid, label=name)
    return maps


def _load_net(out_dir: str):
    net_path = os.path.join(out_dir, "net.json")
    if not os.path.exists(net_path):
        raise ArtifactError(f"network artifact missing: {net_path} (run train first)")
    _verify_artifact(out_dir, "net.json")
    return load_net(net_path)


def _vertex_arrays(model_set, maps):
    names = [m.name for m in model_set.surrogates()]
    outcomes = np.stack([maps[name].values for name in names])
    rates = np.array([maps[name].rate() for name in names])
    return names, outcomes, rates


def _subject_arrays(model_set, maps):
    names = [m.name for m in model_set.subjects()]
    outcomes = np.stack([maps[name].values for name in names])
    rates = np.array([maps[name].rate() for name in names])
    return names, outcomes, rates


def _prepare_is_current(cfg: dict, out_dir: str) -> bool:
    """True when a previous prepare with this config left intact artifacts.

    A recorded artifact whose bytes changed is an error (someone edited or
    corrupted it); a missing one just forces a rebuild.
    """
    entry = _read_manifest(out_dir)["stages"].get("prepare")
    if entry is None:
        return False
    if entry.get("config_sha256") != stage_config_hash(cfg, ("space", "sim", "models")):
        return False
    artifacts = entry.get("artifacts", {})
    if not artifacts:
        return False
    for rel, recorded in artifacts.items():
        path = os.path.join(out_dir, rel)
        if not os.path.exists(path):
            return False
        if _sha256_file(path) != recorded:
            raise ArtifactError(
                f"artifact hash mismatch for {rel}: delete it (or the manifest) to rebuild"
            )
    return True


def run_prepare(cfg: dict, out_dir: str) -> dict:
    """Build the grid and exposure, rasterize every model, gate the rates.

    Rerunning with an unchanged config and intact artifacts skips the work.
    """
    if _prepare_is_current(cfg, out_dir):
        return {"stage": "prepare", "skipped": True}
    os.makedirs(os.path.join(out_dir, "maps"), exist_ok=True)
    grid = build_grid(
        int(cfg["space"]["r_steps"]),
        int(cfg["space"]["rdot_steps"]),
        build_exposure_model(cfg),
    )
    write_exposure_csv(grid, os.path.join(out_dir, "exposure.csv"))
    model_set = build_model_set(cfg)
    maps = build_performance_maps(model_set, grid)
    artifacts = ["exposure.csv"]
    for name, pmap in maps.items():
        rel = os.path.join("maps", f"{name}.csv")
        write_performance_csv(pmap, os.path.join(out_dir, rel))
        artifacts.append(rel)
    rates = validate_rates(maps)
    _write_json(
        os.path.join(out_dir, "rates.json"),
        {
            "rates": rates,
            "roles": {m.name: m.role for m in model_set.models},
            "band": [5e-4, 5e-3],
        },
    )
    artifacts.append("rates.json")
    _record_stage(out_dir, "prepare", cfg, ("space", "sim", "models"), artifacts)
    return {"stage": "prepare", "models": len(maps), "cells": grid.size}


def run_train(cfg: dict, out_dir: str) -> dict:
    """Fit the similarity network against the surrogate maps."""
    grid = _load_grid(cfg, out_dir)
    model_set = build_model_set(cfg)
    maps = _load_maps(cfg, out_dir, grid, [m.name for m in model_set.surrogates()])
    names, outcomes, rates = _vertex_arrays(model_set, maps)
    result = train(
        grid,
        outcomes,
        rates,
        build_net_config(cfg),
        build_train_config(cfg),
        master_seed=int(cfg["seed"]),
    )
    result.params.seed_lineage.update(
        {
            "master_seed": int(cfg["seed"]),
            "labels": ["train/cluster", "train/init", "train/batches"],
            "surrogates": names,
        }
    )
    save_net(result.params, os.path.join(out_dir, "net.json"))
    write_clusters_csv(grid, result.assignments, os.path.join(out_dir, "clusters.csv"))
    write_loss_csv(result.loss_history, os.path.join(out_dir, "loss_history.csv"))
    _record_stage(
        out_dir, "train", cfg, ("net", "train"),
        ["net.json", "clusters.csv", "loss_history.csv"],
    )
    return {
        "stage": "train",
        "first_loss": result.loss_history[0],
        "last_loss": result.loss_history[-1],
    }


def _assignments_from_csv(out_dir: str, grid) -> np.ndarray:
    path = os.path.join(out_dir, "clusters.csv")
    if not os.path.exists(path):
        raise ArtifactError(f"cluster artifact missing: {path} (run train first)")
    _verify_artifact(out_dir, "clusters.csv")
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "r,rdot,cluster":
            raise ArtifactError(f"bad clusters csv header: {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[0] != grid.size:
        raise ArtifactError("clusters.csv does not match the grid")
    return data[:, 2].astype(int)


def run_optimize(cfg: dict, out_dir: str) -> dict:
    """Search for the few-shot plan using the trained network."""
    grid = _load_grid(cfg, out_dir)
    model_set = build_model_set(cfg)
    maps = _load_maps(cfg, out_dir, grid, [m.name for m in model_set.surrogates()])
    names, outcomes, rates = _vertex_arrays(model_set, maps)
    params = _load_net(out_dir)
    assignments = _assignments_from_csv(out_dir, grid)
    plan = optimize(
        grid,
        outcomes,
        rates,
        params,
        assignments,
        build_optimize_config(cfg),
        master_seed=int(cfg["seed"]),
        surrogate_names=names,
    )
    plan.config_hash = stage_config_hash(cfg, ("optimize",))
    plan.similarity_csv = "similarity.csv"
    save_plan(plan, os.path.join(out_dir, "plan.json"))
    write_similarity_csv(plan, params, grid, os.path.join(out_dir, "similarity.csv"))
    _record_stage(out_dir, "optimize", cfg, ("optimize",), ["plan.json", "similarity.csv"])
    return {
        "stage": "optimize",
        "certified_loss": plan.certified_loss,
        "objective": plan.objective,
        "selected_restart": plan.selected_restart,
    }


def run_execute(cfg: dict, out_dir: str) -> dict:
    """Run the planned scenarios on every subject and record the estimates.

    The plan is re-verified before use: its certified loss must reproduce
    from its stored coordinates against the surrogate maps.
    """
    grid = _load_grid(cfg, out_dir)
    model_set = build_model_set(cfg)
    maps = _load_maps(cfg, out_dir, grid, [m.name for m in model_set.models])
    _verify_artifact(out_dir, "plan.json")
    plan = load_plan(os.path.join(out_dir, "plan.json"))
    _, v_outcomes, v_rates = _vertex_arrays(model_set, maps)
    verify_plan(plan, _load_net(out_dir), grid, v_outcomes, v_rates)
    subjects = {}
    for m in model_set.subjects():
        pmap = maps[m.name]
        estimate = execute_plan(plan, pmap)
        true_rate = pmap.rate()
        subjects[m.name] = {
            "estimate": estimate,
            "true_rate": true_rate,
            "abs_error": abs(estimate - true_rate),
        }
    _write_json(
        os.path.join(out_dir, "execution.json"),
        {
            "subjects": subjects,
            "certified_loss": plan.certified_loss,
            "mismatch_weight": "inf" if np.isinf(plan.mismatch_weight) else plan.mismatch_weight,
            "n": plan.n,
        },
    )
    _record_stage(out_dir, "execute", cfg, (), ["execution.json"])
    return {"stage": "execute", "subjects": len(subjects), "certified_loss": plan.certified_loss}


def _eval_context(cfg: dict, out_dir: str) -> EvalContext:
    grid = _load_grid(cfg, out_dir)
    model_set = build_model_set(cfg)
    maps = _load_maps(cfg, out_dir, grid, [m.name for m in model_set.models])
    v_names, v_outcomes, v_rates = _vertex_arrays(model_set, maps)
    s_names, s_outcomes, s_rates = _subject_arrays(model_set, maps)
    ev = cfg["evaluate"]
    return EvalContext(
        grid=grid,
        subject_names=s_names,
        subject_outcomes=s_outcomes,
        subject_rates=s_rates,
        vertex_outcomes=v_outcomes,
        vertex_rates=v_rates,
        params=_load_net(out_dir),
        assignments=_assignments_from_csv(out_dir, grid),
        fst_steps=int(ev["fst_steps"]),
        fst_restarts=int(ev["fst_restarts"]),
        fst_learning_rate=float(ev["fst_learning_rate"]),
        fst_mismatch_weight=parse_weight(ev["fst_mismatch_weight"]),
    )


def run_evaluate(cfg: dict, out_dir: str) -> dict:
    """Trial-based method comparison plus the configured experiments."""
    ctx = _eval_context(cfg, out_dir)
    ev = cfg["evaluate"]
    seed = int(cfg["seed"])
    n_values = [int(n) for n in ev["n_values"]]
    comparison = compare_methods(
        ctx, n_values, int(ev["trials"]), seed, methods=tuple(ev["methods"])
    )
    doc = {
        "comparison": {
            "rows": comparison["rows"],
            "estimates": {
                method: {str(n): est.tolist() for n, est in per_n.items()}
                for method, per_n in comparison["estimates"].items()
            },
        },
        "subjects": ctx.subject_names,
        "true_rates": ctx.subject_rates.tolist(),
        "metadata": {
            "variance_definition": _VARIANCE_NOTE,
            "trials": int(ev["trials"]),
            "n_values": n_values,
            "methods": list(ev["methods"]),
            "master_seed": seed,
        },
        "bound": None,
        "ablation": None,
        "cross_n": None,
    }
    if ev["bound"]["enabled"]:
        doc["bound"] = bound_experiment(
            ctx, int(ev["bound"]["n"]), int(ev["bound"]["members"]), seed,
            restarts=int(ev["bound"]["restarts"]),
        )
    if ev["ablation"]["enabled"]:
        doc["ablation"] = ablation_experiment(
            ctx, int(ev["ablation"]["n"]), int(ev["ablation"]["trials"]), seed
        )
    if ev["cross_n"]["enabled"]:
        doc["cross_n"] = cross_n_experiment(
            ctx,
            [int(n) for n in ev["cross_n"]["train_ns"]],
            [int(n) for n in ev["cross_n"]["test_ns"]],
            int(ev["cross_n"]["trials"]),
            seed,
            net_config=build_net_config(cfg),
            train_config=build_train_config(cfg),
        )
    _write_json(os.path.join(out_dir, "evaluation_results.json"), doc)
    _record_stage(out_dir, "evaluate", cfg, ("evaluate",), ["evaluation_results.json"])
    return {
        "stage": "evaluate",
        "rows": len(comparison["rows"]),
        "bound_violations": None if doc["bound"] is None else doc["bound"]["violations"],
    }


_REPORT_COLUMNS = [
    "subject",
    "n",
    "method",
    "trials",
    "true_rate",
    "avg_abs_error",
    "rel_avg_abs_error",
    "variance",
    "q99_abs_error",
    "rel_q99_abs_error",
]


def _decade(err: float) -> int:
    if err <= 1e-12:
        return -12
    return max(-12, min(0, int(np.floor(np.log10(err)))))


def run_report(cfg: dict, out_dir: str) -> dict:
    """Render the evaluation artifact into CSV tables and histograms."""
    _verify_artifact(out_dir, "evaluation_results.json")
    doc = _read_json(os.path.join(out_dir, "evaluation_results.json"), "evaluation")
    report_dir = os.path.join(out_dir, "report")
    os.makedirs(report_dir, exist_ok=True)
    artifacts = []

    rows = sorted(
        doc["comparison"]["rows"], key=lambda r: (r["subject"], r["n"], r["method"])
    )
    lines = [",".join(_REPORT_COLUMNS)]
    for row in rows:
        lines.append(
            ",".join(
                str(row[c]) if c in ("subject", "n", "method", "trials") else repr(float(row[c]))
                for c in _REPORT_COLUMNS
            )
        )
    rel = os.path.join("report", "report.csv")
    with open(os.path.join(out_dir, rel), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    artifacts.append(rel)

    subjects = doc["subjects"]
    true_rates = {s: doc["true_rates"][j] for j, s in enumerate(subjects)}
    estimates = doc["comparison"]["estimates"]
    methods = doc["metadata"]["methods"]
    for j, subject in enumerate(subjects):
        for n in doc["metadata"]["n_values"]:
            counts: dict = {}
            for method in methods:
                est = np.asarray(estimates[method][str(n)], dtype=float)[:, j]
                for err in np.abs(est - true_rates[subject]):
                    key = (_decade(float(err)), method)
                    counts[key] = counts.get(key, 0) + 1
            hist_lines = ["log10_error_bin,method,count"]
            for (decade, method) in sorted(counts, key=lambda k: (k[0], methods.index(k[1]))):
                hist_lines.append(f"{decade},{method},{counts[(decade, method)]}")
            rel = os.path.join("report", f"hist_{subject}_n{n}.csv")
            with open(os.path.join(out_dir, rel), "w", encoding="utf-8") as fh:
                fh.write("\n".join(hist_lines) + "\n")
            artifacts.append(rel)

    manifest = _read_manifest(out_dir)
    metadata = {
        "variance_definition": doc["metadata"]["variance_definition"],
        "trials": doc["metadata"]["trials"],
        "n_values": doc["metadata"]["n_values"],
        "methods": methods,
        "master_seed": doc["metadata"]["master_seed"],
        "stage_config_hashes": {
            stage: entry["config_sha256"]
            for stage, entry in manifest["stages"].items()
            if stage != "report"  # keep reruns in one directory byte-identical
        },
        "bound": doc["bound"],
        "ablation": doc["ablation"],
        "cross_n": doc["cross_n"],
    }
    rel = os.path.join("report", "metadata.json")
    _write_json(os.path.join(out_dir, rel), metadata)
    artifacts.append(rel)

    _record_stage(out_dir, "report", cfg, (), artifacts)
    return {"stage": "report", "rows": len(rows), "artifacts": len(artifacts)}
