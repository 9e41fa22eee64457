"""JSON configuration: defaults, file loading, dotted overrides, hashing.

A config is a plain nested dict. User files and ``--set`` overrides merge
over the defaults; unknown keys are rejected so typos fail loudly (exit
code 1 from the CLI). Every pipeline stage hashes the canonical JSON of
the config sections it consumed, and artifacts record those hashes, so a
rerun with an unchanged config reproduces artifacts byte for byte.

``mismatch_weight`` accepts the string ``"inf"`` because JSON has no
infinity literal.
"""

from __future__ import annotations

import copy
import hashlib
import json

from .config_defaults import DEFAULT_CONFIG
from .cutin_sim import EpisodeConfig, IdmParams
from .errors import ConfigError
from .fst_optimizer import OptimizeConfig
from .fst_trainer import TrainConfig
from .model_set import ModelSet, ModelSpec
from .scenario_space import ExposureModel, GaussianComponent
from .similarity_net import NetConfig

__all__ = [
    "DEFAULT_CONFIG",
    "default_config",
    "load_config",
    "apply_overrides",
    "canonical_json",
    "config_hash",
    "stage_config_hash",
    "build_exposure_model",
    "build_episode_config",
    "build_model_set",
    "build_net_config",
    "build_train_config",
    "build_optimize_config",
    "parse_weight",
    "validate_config",
]


def default_config() -> dict:
    return copy.deepcopy(DEFAULT_CONFIG)


def _merge(base: dict, override: dict, path: str = "") -> dict:
    """Deep-merge ``override`` into ``base``; lists replace wholesale."""
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {here!r} must be an object")
            _merge(base[key], value, here)
        else:
            base[key] = value
    return base


def load_config(path: str | None) -> dict:
    """Defaults overlaid with the JSON file at ``path`` (if given)."""
    cfg = default_config()
    if path is None:
        return cfg
    try:
        with open(path, "r", encoding="utf-8") as fh:
            user = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file missing: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {path}: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config file must hold a JSON object")
    return _merge(cfg, user)


def apply_overrides(cfg: dict, assignments: list[str]) -> dict:
    """Apply ``section.key=value`` overrides; values parse as JSON when possible."""
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        if not all(keys):
            raise ConfigError(f"override {item!r} has an empty key component")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings (including "inf") pass through
        node = cfg
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                raise ConfigError(f"unknown config section {key!r} in {dotted!r}")
            node = node[key]
        if keys[-1] not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(node[keys[-1]], dict):
            raise ConfigError(f"config key {dotted!r} is a section, not a value")
        node[keys[-1]] = value
    return cfg


def canonical_json(obj) -> str:
    """Deterministic JSON text: sorted keys, compact separators."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def stage_config_hash(cfg: dict, sections: tuple[str, ...]) -> str:
    """Hash of just the sections one stage consumes, plus the master seed."""
    view = {"seed": cfg["seed"]}
    for section in sections:
        view[section] = cfg[section]
    return config_hash(view)


def parse_weight(value) -> float:
    """Mismatch weight from JSON: a positive number or the string "inf"."""
    try:
        w = float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad mismatch weight {value!r}") from exc
    if not w > 0.0:
        raise ConfigError(f"mismatch weight must be positive, got {value!r}")
    return w


def build_exposure_model(cfg: dict) -> ExposureModel:
    comps = []
    for c in cfg["space"]["exposure"]["components"]:
        extra = set(c) - {"weight", "mean_r", "mean_rdot", "std_r", "std_rdot"}
        if extra:
            raise ConfigError(f"unknown exposure component keys {sorted(extra)}")
        try:
            comps.append(
                GaussianComponent(
                    weight=float(c["weight"]),
                    mean_r=float(c["mean_r"]),
                    mean_rdot=float(c["mean_rdot"]),
                    std_r=float(c["std_r"]),
                    std_rdot=float(c["std_rdot"]),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"exposure component missing key {exc}") from exc
    return ExposureModel(components=tuple(comps))


def build_episode_config(cfg: dict) -> EpisodeConfig:
    sim = cfg["sim"]
    return EpisodeConfig(
        av_initial_speed_mps=float(sim["av_initial_speed_mps"]),
        bv_speed_policy=str(sim["bv_speed_policy"]),
        horizon_s=float(sim["horizon_s"]),
        dt_s=float(sim["dt_s"]),
    )


_IDM_FIELDS = (
    "desired_speed",
    "max_accel",
    "comfortable_decel",
    "min_gap",
    "time_headway",
    "accel_exponent",
)


def _build_model(entry: dict, shared: dict, role: str) -> ModelSpec:
    if not isinstance(entry, dict):
        raise ConfigError(f"each {role} entry must be an object, got {entry!r}")
    extra = set(entry) - set(_IDM_FIELDS) - {"name"}
    if extra:
        raise ConfigError(f"unknown model keys {sorted(extra)} in {role} entry")
    name = entry.get("name")
    if not name:
        raise ConfigError(f"{role} entry missing a name")
    params = dict(shared)
    params.update({k: v for k, v in entry.items() if k != "name"})
    missing = [k for k in _IDM_FIELDS if k not in params]
    if missing:
        raise ConfigError(f"model {name!r} missing IDM parameters {missing}")
    return ModelSpec(
        name=str(name),
        role=role,
        idm=IdmParams(**{k: float(params[k]) for k in _IDM_FIELDS}),
    )


def build_model_set(cfg: dict) -> ModelSet:
    """Model fleet from the ``models`` section: shared IDM parameters plus
    per-model overrides, split into surrogates and subjects."""
    section = cfg["models"]
    shared = section.get("shared", {})
    extra = set(shared) - set(_IDM_FIELDS)
    if extra:
        raise ConfigError(f"unknown shared model keys {sorted(extra)}")
    models = [_build_model(e, shared, "surrogate") for e in section["surrogates"]]
    models += [_build_model(e, shared, "subject") for e in section["subjects"]]
    return ModelSet(models=tuple(models), episode=build_episode_config(cfg))


def build_net_config(cfg: dict) -> NetConfig:
    net = cfg["net"]
    return NetConfig(
        layer_sizes=tuple(int(s) for s in net["layer_sizes"]),
        temperature=float(net["temperature"]),
        distance_epsilon=float(net["distance_epsilon"]),
    )


def build_train_config(cfg: dict) -> TrainConfig:
    tr = cfg["train"]
    k = tr["k_clusters"]
    return TrainConfig(
        n_train=int(tr["n_train"]),
        k_clusters=None if k is None else int(k),
        epochs=int(tr["epochs"]),
        batches_per_epoch=int(tr["batches_per_epoch"]),
        learning_rate=float(tr["learning_rate"]),
        momentum=float(tr["momentum"]),
        outcome_feature_scale=float(tr["outcome_feature_scale"]),
    )


def build_optimize_config(cfg: dict) -> OptimizeConfig:
    op = cfg["optimize"]
    return OptimizeConfig(
        n=int(op["n"]),
        steps=int(op["steps"]),
        learning_rate=float(op["learning_rate"]),
        restarts=int(op["restarts"]),
        mismatch_weight=parse_weight(op["mismatch_weight"]),
    )


def _check_evaluate(cfg: dict) -> None:
    ev = cfg["evaluate"]
    if int(ev["trials"]) < 1:
        raise ConfigError("evaluate.trials must be at least 1")
    if not ev["n_values"] or any(int(n) < 1 for n in ev["n_values"]):
        raise ConfigError("evaluate.n_values must be positive integers")
    if not ev["methods"]:
        raise ConfigError("evaluate.methods must name at least one method")
    if int(ev["fst_restarts"]) < 1:
        raise ConfigError("evaluate.fst_restarts must be at least 1")
    if int(ev["fst_steps"]) < 0:
        raise ConfigError("evaluate.fst_steps must be non-negative")
    if not float(ev["fst_learning_rate"]) > 0.0:
        raise ConfigError("evaluate.fst_learning_rate must be positive")
    parse_weight(ev["fst_mismatch_weight"])


def validate_config(cfg: dict) -> None:
    """Run every section builder and raise one ConfigError listing all
    violations, so a bad config reports everything wrong at once."""
    checks = (
        ("space.exposure", lambda: build_exposure_model(cfg)),
        ("sim", lambda: build_episode_config(cfg)),
        ("models", lambda: build_model_set(cfg)),
        ("net", lambda: build_net_config(cfg)),
        ("train", lambda: build_train_config(cfg)),
        ("optimize", lambda: build_optimize_config(cfg)),
        ("evaluate", lambda: _check_evaluate(cfg)),
    )
    problems = []
    for label, check in checks:
        try:
            check()
        except (ConfigError, TypeError, ValueError) as exc:
            problems.append(f"{label}: {exc}")
    if int(cfg.get("seed", -1)) < 0:
        problems.append("seed: must be a non-negative integer")
    if problems:
        raise ConfigError("invalid config: " + "; ".join(problems))
