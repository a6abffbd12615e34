"""Bundle of configuration, grid, scan region and time scheme with cached operators."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from lasopt.model import ConfigError, LevelSetRegion, ModelConfig, SlabGrid


class DomainError(ValueError):
    """An argument lies outside its admissible range (e.g. tau outside [3r, T])."""


@dataclass(frozen=True, eq=False)
class Problem:
    config: ModelConfig
    grid: SlabGrid
    region: LevelSetRegion | None = None
    theta: float = 1.0

    def __post_init__(self):
        if not (0.5 <= self.theta <= 1.0):
            raise ConfigError("theta", "must lie in [1/2, 1]")
        if abs(self.config.T_final - self.grid.T_final) > 1e-12 * self.config.T_final:
            raise ConfigError("grid.T_final", "grid horizon must equal T_final")

    @cached_property
    def operator(self):
        from lasopt.pde import heat_operator

        return heat_operator(self.config, self.grid, self.theta)

    @cached_property
    def y_Q(self) -> np.ndarray:
        return self.config.yQ_target.evaluate(self.grid, self.region)

    @cached_property
    def y_Omega(self) -> np.ndarray:
        return self.config.yOmega_target.evaluate(self.grid, self.region)

    def check_tau(self, tau: float):
        lo, hi = self.config.tau_min, self.config.T_final
        if not (np.isfinite(tau) and lo - 1e-14 <= tau <= hi + 1e-14):
            raise DomainError(f"tau={tau!r} outside [{lo:g}, {hi:g}]")


@lru_cache(maxsize=32)
def get_problem(config: ModelConfig, grid: SlabGrid, region=None, theta: float = 1.0) -> Problem:
    """Shared Problem for equal (config, grid) and identical region objects."""
    return Problem(config, grid, region, float(theta))
