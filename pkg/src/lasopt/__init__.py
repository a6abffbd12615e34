"""Laser-path optimal control for powder-bed heating.

The package simulates a Gaussian laser heating a rectangular powder-bed slab,
optimizes the scan path and treatment time with a quadratic-penalty method,
and checks first- and second-order optimality at computed solutions.
"""

from lasopt.model import (
    ConfigError,
    DiskRegion,
    LaserPath,
    LevelSetRegion,
    ModelConfig,
    ShapeError,
    SlabGrid,
    SuperellipseRegion,
    TargetSpec,
)
from lasopt.problem import DomainError, Problem

__all__ = [
    "ConfigError",
    "DiskRegion",
    "DomainError",
    "LaserPath",
    "LevelSetRegion",
    "ModelConfig",
    "Problem",
    "ShapeError",
    "SlabGrid",
    "SuperellipseRegion",
    "TargetSpec",
]

__version__ = "0.1.0"
