"""Default fleet of follower models: surrogates blanket the behavior space,
subjects are the models under test.

Surrogates and subjects share every IDM parameter except time headway and
comfortable deceleration, which sweep from aggressive to cautious. All
default models land in the crash-rate band [5e-4, 5e-3] under the default
grid, exposure, and episode config; ``validate_rates`` enforces that band.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cutin_sim import EpisodeConfig, IdmParams, PerformanceMap, rasterize_outcomes
from .errors import ConfigError, NumericalError
from .scenario_space import ScenarioGrid

__all__ = [
    "RATE_BAND",
    "ModelSpec",
    "ModelSet",
    "default_model_set",
    "build_performance_maps",
    "validate_rates",
]

# Inclusive crash-rate band every default model must land in.
RATE_BAND = (5e-4, 5e-3)

_SHARED = dict(desired_speed=25.0, max_accel=2.0, min_gap=2.0, accel_exponent=4.0)

# (time_headway, comfortable_decel) sweeps, aggressive to cautious.
_SURROGATE_SWEEP = ((0.6, 3.5), (1.0, 3.0), (1.5, 2.5), (2.0, 2.0))
_SUBJECT_SWEEP = ((0.8, 3.25), (1.2, 2.75), (1.7, 2.3))


@dataclass(frozen=True)
class ModelSpec:
    """One named follower model with a role in the workflow."""

    name: str
    role: str
    idm: IdmParams

    def __post_init__(self) -> None:
        if self.role not in ("surrogate", "subject"):
            raise ConfigError(f"role must be surrogate or subject, got {self.role!r}")
        if not self.name:
            raise ConfigError("model name must be non-empty")


@dataclass(frozen=True)
class ModelSet:
    """Surrogate and subject models plus the episode config they share."""

    models: tuple[ModelSpec, ...]
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)

    def __post_init__(self) -> None:
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ConfigError("model names must be unique")
        if not self.surrogates():
            raise ConfigError("model set needs at least one surrogate")

    def surrogates(self) -> tuple[ModelSpec, ...]:
        return tuple(m for m in self.models if m.role == "surrogate")

    def subjects(self) -> tuple[ModelSpec, ...]:
        return tuple(m for m in self.models if m.role == "subject")

    def get(self, name: str) -> ModelSpec:
        for m in self.models:
            if m.name == name:
                return m
        raise ConfigError(f"unknown model {name!r}")


def default_model_set(episode: EpisodeConfig | None = None) -> ModelSet:
    """Four surrogates (SM-1..SM-4) and three subjects (AV-1..AV-3)."""
    models = []
    for i, (headway, decel) in enumerate(_SURROGATE_SWEEP, start=1):
        models.append(
            ModelSpec(
                name=f"SM-{i}",
                role="surrogate",
                idm=IdmParams(time_headway=headway, comfortable_decel=decel, **_SHARED),
            )
        )
    for i, (headway, decel) in enumerate(_SUBJECT_SWEEP, start=1):
        models.append(
            ModelSpec(
                name=f"AV-{i}",
                role="subject",
                idm=IdmParams(time_headway=headway, comfortable_decel=decel, **_SHARED),
            )
        )
    return ModelSet(models=tuple(models), episode=episode or EpisodeConfig())


def build_performance_maps(
    model_set: ModelSet, grid: ScenarioGrid
) -> dict[str, PerformanceMap]:
    """Rasterize every model in the set over ``grid``, keyed by model name."""
    return {
        m.name: rasterize_outcomes(grid, m.idm, model_set.episode, label=m.name)
        for m in model_set.models
    }


def validate_rates(maps: dict[str, PerformanceMap]) -> dict[str, float]:
    """Check every map's exposure-weighted rate against the band; return rates."""
    lo, hi = RATE_BAND
    rates = {}
    for name, pmap in maps.items():
        mu = pmap.rate()
        if not np.isfinite(mu) or not lo <= mu <= hi:
            raise NumericalError(
                f"model {name} crash rate {mu!r} outside band [{lo!r}, {hi!r}]"
            )
        rates[name] = mu
    return rates
