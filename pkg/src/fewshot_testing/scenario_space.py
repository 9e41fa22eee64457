"""Discrete cut-in scenario space with a truncated-Gaussian exposure model.

A scenario is a (range, range rate) pair describing the moment a vehicle
cuts in ahead of the follower. The continuous box is discretized into a
regular grid of cell centers; exposure probability mass is a two-component
Gaussian mixture evaluated pointwise at the centers and renormalized, so it
is an exact categorical distribution over cells.

Grid cells are ordered row-major with range fastest:
``k = i_rdot * r_steps + i_r``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError

__all__ = [
    "R_MIN",
    "R_MAX",
    "RDOT_MIN",
    "RDOT_MAX",
    "Scenario",
    "GaussianComponent",
    "ExposureModel",
    "ScenarioGrid",
    "build_grid",
    "normalize_coords",
    "denormalize_coords",
    "nearest_cell",
    "write_exposure_csv",
    "read_exposure_csv",
]

# Scenario box: initial range in meters, initial range rate in m/s
# (negative range rate means the gap is closing).
R_MIN = 0.0
R_MAX = 90.0
RDOT_MIN = -20.0
RDOT_MAX = 10.0

# Sum of cell masses must be 1 to this tolerance after renormalization.
_NORMALIZATION_TOL = 1e-12


@dataclass(frozen=True)
class Scenario:
    """One cut-in scenario: initial range and range rate at the cut-in."""

    range_m: float
    range_rate_mps: float


@dataclass(frozen=True)
class GaussianComponent:
    """One component of the exposure mixture (axis-aligned 2-D Gaussian)."""

    weight: float
    mean_r: float
    mean_rdot: float
    std_r: float
    std_rdot: float


def _default_components() -> tuple[GaussianComponent, ...]:
    return (
        GaussianComponent(0.7, 40.0, 0.0, 12.0, 3.0),
        GaussianComponent(0.3, 25.0, -2.0, 8.0, 3.0),
    )


@dataclass(frozen=True)
class ExposureModel:
    """Mixture-of-Gaussians scenario exposure, truncated to the box.

    Component weights must be positive and sum to 1; standard deviations
    must be positive. Truncation happens implicitly: density is evaluated
    only at in-box cell centers and renormalized.
    """

    components: tuple[GaussianComponent, ...] = field(
        default_factory=_default_components
    )

    def __post_init__(self) -> None:
        if not self.components:
            raise ConfigError("exposure model needs at least one component")
        total = 0.0
        for c in self.components:
            if c.weight <= 0.0:
                raise ConfigError(f"component weight must be positive, got {c.weight}")
            if c.std_r <= 0.0 or c.std_rdot <= 0.0:
                raise ConfigError("component standard deviations must be positive")
            total += c.weight
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"component weights must sum to 1, got {total}")

    def density(self, r: np.ndarray, rdot: np.ndarray) -> np.ndarray:
        """Untruncated mixture density at the given points."""
        r = np.asarray(r, dtype=float)
        rdot = np.asarray(rdot, dtype=float)
        out = np.zeros(np.broadcast(r, rdot).shape)
        for c in self.components:
            z = ((r - c.mean_r) / c.std_r) ** 2 + ((rdot - c.mean_rdot) / c.std_rdot) ** 2
            out += c.weight / (2.0 * np.pi * c.std_r * c.std_rdot) * np.exp(-0.5 * z)
        return out


@dataclass(frozen=True)
class ScenarioGrid:
    """Regular grid over the scenario box with per-cell exposure mass.

    Attributes
    ----------
    r_steps, rdot_steps:
        Cell counts along each axis (inclusive endpoints, so spacing is
        ``R_MAX / (r_steps - 1)`` etc.).
    r, rdot:
        Flat cell-center coordinates, row-major with range fastest.
    exposure:
        Flat cell masses aligned with ``r``/``rdot``; sums to 1.
    """

    r_steps: int
    rdot_steps: int
    r: np.ndarray
    rdot: np.ndarray
    exposure: np.ndarray

    @property
    def size(self) -> int:
        return self.r_steps * self.rdot_steps

    @property
    def r_spacing(self) -> float:
        return (R_MAX - R_MIN) / (self.r_steps - 1)

    @property
    def rdot_spacing(self) -> float:
        return (RDOT_MAX - RDOT_MIN) / (self.rdot_steps - 1)

    def scenario(self, k: int) -> Scenario:
        """Scenario at flat cell index ``k``."""
        return Scenario(float(self.r[k]), float(self.rdot[k]))

    def cells(self) -> list[Scenario]:
        """All cell centers as scenarios, in flat-index order."""
        return [Scenario(float(a), float(b)) for a, b in zip(self.r, self.rdot)]


def build_grid(
    r_steps: int = 91,
    rdot_steps: int = 61,
    exposure_model: ExposureModel | None = None,
) -> ScenarioGrid:
    """Build the discrete scenario grid and its normalized exposure masses."""
    if r_steps < 2 or rdot_steps < 2:
        raise ConfigError("grid needs at least 2 steps per axis")
    if exposure_model is None:
        exposure_model = ExposureModel()
    r_values = np.linspace(R_MIN, R_MAX, r_steps)
    rdot_values = np.linspace(RDOT_MIN, RDOT_MAX, rdot_steps)
    r = np.tile(r_values, rdot_steps)
    rdot = np.repeat(rdot_values, r_steps)
    density = exposure_model.density(r, rdot)
    total = density.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise NumericalError("exposure density vanished on the grid")
    exposure = density / total
    if abs(exposure.sum() - 1.0) > _NORMALIZATION_TOL:
        raise NumericalError("exposure normalization failed")
    grid = ScenarioGrid(r_steps, rdot_steps, r, rdot, exposure)
    for arr in (grid.r, grid.rdot, grid.exposure):
        arr.setflags(write=False)
    return grid


def normalize_coords(r, rdot):
    """Map box coordinates to the unit square ([0,1] per axis)."""
    u_r = (np.asarray(r, dtype=float) - R_MIN) / (R_MAX - R_MIN)
    u_rdot = (np.asarray(rdot, dtype=float) - RDOT_MIN) / (RDOT_MAX - RDOT_MIN)
    if np.any(u_r < 0.0) or np.any(u_r > 1.0) or np.any(u_rdot < 0.0) or np.any(u_rdot > 1.0):
        raise ConfigError("coordinates outside the scenario box")
    return u_r, u_rdot


def denormalize_coords(u_r, u_rdot):
    """Inverse of :func:`normalize_coords`."""
    u_r = np.asarray(u_r, dtype=float)
    u_rdot = np.asarray(u_rdot, dtype=float)
    if np.any(u_r < 0.0) or np.any(u_r > 1.0) or np.any(u_rdot < 0.0) or np.any(u_rdot > 1.0):
        raise ConfigError("normalized coordinates outside the unit square")
    r = R_MIN + u_r * (R_MAX - R_MIN)
    rdot = RDOT_MIN + u_rdot * (RDOT_MAX - RDOT_MIN)
    return r, rdot


def nearest_cell(grid: ScenarioGrid, r, rdot):
    """Flat index of the nearest cell center; midpoint ties take the lower index.

    ``ceil(x - 0.5)`` is round-half-down, which matches a brute-force
    nearest-center scan that keeps the first (lowest-index) minimum.
    """
    r = np.asarray(r, dtype=float)
    rdot = np.asarray(rdot, dtype=float)
    i_r = np.ceil((r - R_MIN) / grid.r_spacing - 0.5).astype(int)
    i_r = np.clip(i_r, 0, grid.r_steps - 1)
    i_rdot = np.ceil((rdot - RDOT_MIN) / grid.rdot_spacing - 0.5).astype(int)
    i_rdot = np.clip(i_rdot, 0, grid.rdot_steps - 1)
    k = i_rdot * grid.r_steps + i_r
    if k.ndim == 0:
        return int(k)
    return k


def write_exposure_csv(grid: ScenarioGrid, path) -> None:
    """Write cells and exposure masses as ``r,rdot,p`` rows in flat order."""
    lines = ["r,rdot,p"]
    for a, b, c in zip(grid.r, grid.rdot, grid.exposure):
        lines.append(f"{float(a)!r},{float(b)!r},{float(c)!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_exposure_csv(path) -> ScenarioGrid:
    """Read a grid written by :func:`write_exposure_csv`.

    Validates the header, the row-major cell ordering, and that masses sum
    to 1; the step counts are recovered from the coordinate pattern.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "r,rdot,p":
            raise ConfigError(f"bad exposure csv header: {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != 3:
        raise ConfigError("exposure csv must have 3 columns")
    r, rdot, p = data[:, 0], data[:, 1], data[:, 2]
    r_steps = int(np.argmax(r[1:] < r[:-1])) + 1 if r.size > 1 else 1
    if r.size % r_steps != 0:
        raise ConfigError("exposure csv rows do not form a full grid")
    rdot_steps = r.size // r_steps
    expect_r = np.tile(np.linspace(R_MIN, R_MAX, r_steps), rdot_steps)
    expect_rdot = np.repeat(np.linspace(RDOT_MIN, RDOT_MAX, rdot_steps), r_steps)
    if not (np.allclose(r, expect_r) and np.allclose(rdot, expect_rdot)):
        raise ConfigError("exposure csv cells are not in row-major grid order")
    if abs(p.sum() - 1.0) > 1e-9:
        raise NumericalError(f"exposure csv masses sum to {p.sum()!r}, not 1")
    grid = ScenarioGrid(r_steps, rdot_steps, expect_r, expect_rdot, p)
    for arr in (grid.r, grid.rdot, grid.exposure):
        arr.setflags(write=False)
    return grid
