"""JSON run configuration: model, grid, scan region, start point and penalty schedule."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from lasopt.model import (ConfigError, DiskRegion, LaserPath, LevelSetRegion, ModelConfig, SlabGrid,
                          SuperellipseRegion, TargetSpec)
from lasopt.optimize import PenaltySchedule

FORMAT_VERSION = "1.0"
SUPPORTED_VERSIONS = ("1.0",)


def load_schema() -> dict:
    return json.loads(resources.files("lasopt").joinpath("data/schema.json").read_text())


@dataclass
class StartSpec:
    """Initial path and treatment time; ``kind`` is constant, circle or line."""

    kind: str = "constant"
    point: tuple = (0.5, 0.5)
    center: tuple = (0.5, 0.5)
    radius: float = 0.2
    turns: float = 1.0
    end: tuple = (0.5, 0.5)
    tau: float | None = None

    def build(self, grid: SlabGrid) -> LaserPath:
        if self.kind == "constant":
            return LaserPath.constant(self.point, grid.nt, grid.T_final)
        if self.kind == "circle":
            return LaserPath.circle(self.center, self.radius, grid.nt, grid.T_final, turns=self.turns)
        if self.kind == "line":
            return LaserPath.line(self.point, self.end, grid.nt, grid.T_final)
        raise ConfigError("start.kind", f"unknown start kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {f.name: list(v) if isinstance(v := getattr(self, f.name), tuple) else v for f in fields(self)}


@dataclass
class RunConfig:
    model: ModelConfig
    grid: SlabGrid
    region: LevelSetRegion
    theta: float = 1.0
    start: StartSpec = field(default_factory=StartSpec)
    schedule: PenaltySchedule = field(default_factory=PenaltySchedule)
    seed: int = 0

    @property
    def start_tau(self) -> float:
        tau = self.start.tau
        if tau is None:
            tau = 0.5 * (self.model.tau_min + self.model.T_final)
        return float(min(max(tau, self.model.tau_min), self.model.T_final))

    def to_dict(self) -> dict:
        return {
            "spec_version": FORMAT_VERSION,
            "model": self.model.to_dict(),
            "grid": self.grid.to_dict(),
            "region": self.region.to_dict(),
            "theta": self.theta,
            "start": self.start.to_dict(),
            "schedule": {f.name: getattr(self.schedule, f.name) for f in fields(self.schedule)},
            "seed": self.seed,
        }


def _field_name(error: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in error.absolute_path]
    if error.validator == "required":
        missing = error.message.split("'")[1] if "'" in error.message else ""
        parts.append(missing)
    elif error.validator == "additionalProperties" and "'" in error.message:
        parts.append(error.message.split("'")[1])
    return ".".join(p for p in parts if p) or "config"


def _region(data: dict) -> LevelSetRegion:
    kind = data.get("kind", "disk")
    if kind == "disk":
        return DiskRegion(data.get("center", (0.5, 0.5)), float(data.get("radius", 0.3)))
    return SuperellipseRegion(data.get("center", (0.5, 0.5)), data.get("semi_axes", (0.3, 0.3)),
                              int(data.get("degree", 4)))


def _target(data) -> TargetSpec:
    if isinstance(data, (int, float)):
        return TargetSpec("constant", float(data))
    return TargetSpec(**data)


def config_from_dict(data: dict, overrides: dict | None = None) -> RunConfig:
    """Validate against the shipped schema and build the run configuration.

    ``overrides`` holds command-line values; they win over the document,
    which wins over the dataclass defaults.
    """
    try:
        jsonschema.validate(data, load_schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(_field_name(exc), exc.message) from None
    version = data["spec_version"]
    if version not in SUPPORTED_VERSIONS:
        raise ConfigError("spec_version", f"unsupported version {version!r}")
    model = dict(data.get("model", {}))
    for name in ("yQ_target", "yOmega_target"):
        if name in model:
            model[name] = _target(model[name])
    cfg = ModelConfig(**model)
    grid_data = dict(data.get("grid", {}))
    grid_data.setdefault("T_final", cfg.T_final)
    grid = SlabGrid(**grid_data)
    if grid.T_final != cfg.T_final:
        raise ConfigError("grid.T_final", "must equal model.T_final")
    region = _region(data.get("region", {}))
    start = StartSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.get("start", {}).items()})
    sched = dict(data.get("schedule", {}))
    seed = int(data.get("seed", 0))
    overrides = overrides or {}
    for key in ("kappa0", "growth", "n_outer", "tol0", "max_inner"):
        if overrides.get(key) is not None:
            sched[key] = overrides[key]
    if overrides.get("seed") is not None:
        seed = int(overrides["seed"])
    try:
        schedule = PenaltySchedule(**sched)
    except ValueError as exc:
        raise ConfigError("schedule", str(exc)) from None
    theta = float(data.get("theta", 1.0))
    return RunConfig(cfg, grid, region, theta, start, schedule, seed)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    return config_from_dict(data, overrides)


def read_path_csv(path, grid: SlabGrid) -> LaserPath:
    """Path file with header t,x,y and nt+1 rows."""
    try:
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError("path_file", f"cannot read path file: {exc}") from None
    if arr.shape[1] < 3:
        raise ConfigError("path_file", "expected columns t,x,y")
    if arr.shape[0] != grid.nt + 1:
        raise ConfigError("path_file", f"has {arr.shape[0]} nodes, expected nt+1 = {grid.nt + 1}")
    return LaserPath(arr[:, 1:3], grid.T_final)


def write_path_csv(path, values: LaserPath) -> None:
    t = values.times
    np.savetxt(path, np.column_stack([t, values.values]), delimiter=",", header="t,x,y", comments="",
               fmt="%.17g")
