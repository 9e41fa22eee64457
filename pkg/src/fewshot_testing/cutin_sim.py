"""Cut-in episode simulator for an IDM-style follower model.

An episode starts at the cut-in instant: the lead vehicle appears at gap
``range_m`` moving at the follower's initial speed plus ``range_rate_mps``
(floored at 0) and holds that speed. The follower reacts with a bounded
intelligent-driver-model acceleration. A crash is a gap that reaches zero
at any time, including the initial instant.

Integration is semi-implicit Euler at fixed ``dt_s``: the follower speed
updates first, then the gap integrates with the new speed. Acceleration is
clamped to ``[-comfortable_decel, +max_accel]``, so the comfortable
deceleration is the braking capability limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .scenario_space import Scenario, ScenarioGrid

__all__ = [
    "IdmParams",
    "EpisodeConfig",
    "EpisodeResult",
    "PerformanceMap",
    "simulate_episode",
    "rasterize_outcomes",
    "write_performance_csv",
    "read_performance_csv",
]


@dataclass(frozen=True)
class IdmParams:
    """Follower model parameters.

    ``comfortable_decel`` doubles as the braking limit; ``min_gap`` is the
    jam distance in the desired-gap law
    ``s* = min_gap + v*T + v*dv / (2*sqrt(max_accel*comfortable_decel))``.
    """

    desired_speed: float = 25.0
    max_accel: float = 2.0
    comfortable_decel: float = 3.0
    min_gap: float = 2.0
    time_headway: float = 1.0
    accel_exponent: float = 4.0

    def __post_init__(self) -> None:
        if self.desired_speed <= 0.0:
            raise ConfigError("desired_speed must be positive")
        if self.max_accel <= 0.0 or self.comfortable_decel <= 0.0:
            raise ConfigError("acceleration limits must be positive")
        if self.min_gap < 0.0 or self.time_headway < 0.0:
            raise ConfigError("min_gap and time_headway must be non-negative")
        if self.accel_exponent <= 0.0:
            raise ConfigError("accel_exponent must be positive")


@dataclass(frozen=True)
class EpisodeConfig:
    """Episode setup shared by every scenario in a sweep."""

    av_initial_speed_mps: float = 20.0
    bv_speed_policy: str = "hold"
    horizon_s: float = 10.0
    dt_s: float = 0.1

    def __post_init__(self) -> None:
        if self.av_initial_speed_mps < 0.0:
            raise ConfigError("av_initial_speed_mps must be non-negative")
        if self.bv_speed_policy != "hold":
            raise ConfigError(
                f"unsupported bv_speed_policy {self.bv_speed_policy!r} (only 'hold')"
            )
        if not 0.0 < self.dt_s <= 0.5:
            raise ConfigError("dt_s must satisfy 0 < dt <= 0.5")
        if self.horizon_s < self.dt_s:
            raise ConfigError("horizon_s must cover at least one step")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon_s / self.dt_s))


@dataclass(frozen=True)
class EpisodeResult:
    """Outcome of one simulated episode."""

    crashed: bool
    min_gap_m: float
    crash_time_s: float | None
    times_s: np.ndarray
    gaps_m: np.ndarray
    follower_speeds_mps: np.ndarray


def _step(gap, v_f, v_l, live, idm: IdmParams, dt: float):
    """One integrator step on parallel lanes; frozen lanes stay put."""
    dv = v_f - v_l
    s_star = (
        idm.min_gap
        + v_f * idm.time_headway
        + v_f * dv / (2.0 * np.sqrt(idm.max_accel * idm.comfortable_decel))
    )
    s_safe = np.where(gap > 0.0, gap, 1.0)
    acc = idm.max_accel * (
        1.0 - (v_f / idm.desired_speed) ** idm.accel_exponent - (s_star / s_safe) ** 2
    )
    acc = np.clip(acc, -idm.comfortable_decel, idm.max_accel)
    v_f = np.where(live, np.maximum(0.0, v_f + acc * dt), v_f)
    gap = np.where(live, gap + (v_l - v_f) * dt, gap)
    return gap, v_f


def simulate_episode(
    scenario: Scenario, idm: IdmParams, episode: EpisodeConfig
) -> EpisodeResult:
    """Simulate one cut-in episode and record the gap trajectory."""
    dt = episode.dt_s
    n_steps = episode.n_steps
    gap = np.array([float(scenario.range_m)])
    v_f = np.array([float(episode.av_initial_speed_mps)])
    v_l = np.maximum(0.0, v_f + float(scenario.range_rate_mps))
    crashed = gap <= 0.0
    times = [0.0]
    gaps = [float(gap[0])]
    speeds = [float(v_f[0])]
    crash_time = 0.0 if crashed[0] else None
    for step in range(n_steps):
        if crashed[0]:
            break
        gap, v_f = _step(gap, v_f, v_l, ~crashed, idm, dt)
        crashed = crashed | (gap <= 0.0)
        times.append((step + 1) * dt)
        gaps.append(float(gap[0]))
        speeds.append(float(v_f[0]))
        if crashed[0] and crash_time is None:
            crash_time = (step + 1) * dt
    return EpisodeResult(
        crashed=bool(crashed[0]),
        min_gap_m=float(min(gaps)),
        crash_time_s=crash_time,
        times_s=np.array(times),
        gaps_m=np.array(gaps),
        follower_speeds_mps=np.array(speeds),
    )


@dataclass(frozen=True)
class PerformanceMap:
    """Per-cell episode outcome (1.0 crash, 0.0 no crash) over a grid."""

    grid: ScenarioGrid
    values: np.ndarray
    label: str = ""

    def rate(self) -> float:
        """Exposure-weighted outcome rate over the grid."""
        return float(self.values @ self.grid.exposure)


def rasterize_outcomes(
    grid: ScenarioGrid, idm: IdmParams, episode: EpisodeConfig, label: str = ""
) -> PerformanceMap:
    """Simulate every grid cell in parallel and collect crash indicators."""
    dt = episode.dt_s
    gap = grid.r.astype(float).copy()
    v_f = np.full(grid.size, float(episode.av_initial_speed_mps))
    v_l = np.maximum(0.0, float(episode.av_initial_speed_mps) + grid.rdot)
    crashed = gap <= 0.0
    for _ in range(episode.n_steps):
        live = ~crashed
        gap, v_f = _step(gap, v_f, v_l, live, idm, dt)
        crashed = crashed | (gap <= 0.0)
    values = crashed.astype(float)
    values.setflags(write=False)
    return PerformanceMap(grid=grid, values=values, label=label)


def write_performance_csv(pmap: PerformanceMap, path) -> None:
    """Write per-cell outcomes as ``r,rdot,value`` rows in flat order."""
    lines = ["r,rdot,value"]
    for a, b, c in zip(pmap.grid.r, pmap.grid.rdot, pmap.values):
        lines.append(f"{float(a)!r},{float(b)!r},{float(c)!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_performance_csv(path, grid: ScenarioGrid, label: str = "") -> PerformanceMap:
    """Read a map written by :func:`write_performance_csv` against ``grid``."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "r,rdot,value":
            raise ConfigError(f"bad performance csv header: {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != 3 or data.shape[0] != grid.size:
        raise ConfigError("performance csv does not match the grid")
    if not (np.allclose(data[:, 0], grid.r) and np.allclose(data[:, 1], grid.rdot)):
        raise ConfigError("performance csv cells are not in grid order")
    values = data[:, 2]
    values.setflags(write=False)
    return PerformanceMap(grid=grid, values=values, label=label)
