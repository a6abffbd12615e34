"""Shared fixtures: the desk configuration, a small grid and the acceptance summary."""

from pathlib import Path

import numpy as np
import pytest

from lasopt.config import load_config
from lasopt.model import DiskRegion, LaserPath, ModelConfig, SlabGrid, TargetSpec
from lasopt.optimize import penalty_loop

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str):
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def desk_config() -> ModelConfig:
    return load_config(CONFIGS / "desk.json").model


@pytest.fixture(scope="session")
def desk_run():
    return load_config(CONFIGS / "desk.json")


@pytest.fixture(scope="session")
def desk_solution(desk_run):
    run = desk_run
    report = penalty_loop(run.model, run.grid, run.schedule, (run.start.build(run.grid), run.start_tau),
                          region=run.region, theta=run.theta)
    return run, report


@pytest.fixture(scope="session")
def beta_solution():
    run = load_config(CONFIGS / "beta_dominated.json")
    report = penalty_loop(run.model, run.grid, run.schedule, (run.start.build(run.grid), run.start_tau),
                          region=run.region, theta=run.theta)
    return run, report


@pytest.fixture
def small_grid() -> SlabGrid:
    return SlabGrid(nx=5, ny=5, nz=3, nt=20)


@pytest.fixture
def small_config() -> ModelConfig:
    return ModelConfig(beam_radius=0.3, laser_power=0.4, lambda_Q=30.0, lambda_Omega=30.0,
                       yQ_target=TargetSpec("melt_column", 1.0, 0.0, (0.35, 0.5, 0.15)),
                       yOmega_target=TargetSpec("melt_column", 1.0, 0.0, (0.65, 0.5, 0.15)))


@pytest.fixture
def disk() -> DiskRegion:
    return DiskRegion((0.5, 0.5), 0.3)


def wiggly_path(grid: SlabGrid, seed: int = 0, amplitude: float = 0.1) -> LaserPath:
    """Smooth random path around the unit-square centre."""
    rng = np.random.default_rng(seed)
    t = grid.times / grid.T_final
    coef = rng.standard_normal((3, 2)) / np.arange(1, 4)[:, None] ** 2
    offset = np.sin(np.pi * np.outer(t, np.arange(1, 4))) @ coef
    return LaserPath(0.5 + amplitude * offset, grid.T_final)


@pytest.fixture(scope="session")
def desk_soc(desk_solution):
    from lasopt.diagnostics import critical_cone, soc_check

    run, report = desk_solution
    tol = 10 * run.schedule.tolerances()[-1]
    cone = critical_cone(run.model, run.grid, report.path, report.tau, report.multiplier, region=run.region,
                         theta=run.theta, tol=tol)
    soc = soc_check(run.model, run.grid, report.path, report.tau, report.multiplier, cone, region=run.region,
                    theta=run.theta)
    return cone, soc
