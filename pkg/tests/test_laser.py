import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lasopt.laser import ResolutionWarning, linearized_source, second_source, source_field
from lasopt.model import LaserPath, ModelConfig, ShapeError, SlabGrid

from conftest import wiggly_path

GRID = SlabGrid(nx=9, ny=9, nz=2, nt=6)


def _on_node_path(grid, node):
    return LaserPath.constant(grid.top_xy[node], grid.nt, grid.T_final)


def test_peak_value_at_beam_center():
    cfg = ModelConfig(alpha_abs=1.0, laser_power=math.pi / 2, beam_radius=1.0)
    path = _on_node_path(GRID, 40)
    assert source_field(cfg, GRID, path)[:, 40] == pytest.approx(np.ones(GRID.nt + 1), rel=1e-15)


def test_value_one_radius_away():
    cfg = ModelConfig(beam_radius=0.25)
    center = GRID.top_xy[40]
    path = LaserPath.constant(center - [0.25, 0.0], GRID.nt)
    assert source_field(cfg, GRID, path)[0, 40] == pytest.approx(cfg.peak_flux * math.exp(-2.0), rel=1e-14)


def test_total_absorbed_power():
    grid = SlabGrid(Lx=4.0, Ly=4.0, nx=81, ny=81, nz=2, nt=2)
    cfg = ModelConfig(alpha_abs=0.7, laser_power=3.0, beam_radius=0.4)
    path = LaserPath.constant((2.0, 2.0), grid.nt)
    total = source_field(cfg, grid, path)[0] @ grid.top_weights
    assert total == pytest.approx(cfg.alpha_abs * cfg.laser_power, rel=1e-2)


def test_resolution_warning():
    grid = SlabGrid(nx=5, ny=5, nz=2, nt=2)
    with pytest.warns(ResolutionWarning):
        source_field(ModelConfig(beam_radius=0.4), grid, LaserPath.constant((0.5, 0.5), 2))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        source_field(ModelConfig(beam_radius=0.6), grid, LaserPath.constant((0.5, 0.5), 2))


@settings(max_examples=30)
@given(st.integers(0, 2**31))
def test_source_bounded_by_peak(seed):
    cfg = ModelConfig()
    path = wiggly_path(GRID, seed, amplitude=0.5)
    values = source_field(cfg, GRID, path)
    assert np.all(values >= 0.0) and np.all(values <= cfg.peak_flux)


def test_linearized_source_zero_cases():
    cfg = ModelConfig()
    path = _on_node_path(GRID, 40)
    assert np.all(linearized_source(cfg, GRID, path, np.zeros((GRID.nt + 1, 2))) == 0.0)
    d = np.random.default_rng(0).standard_normal((GRID.nt + 1, 2))
    assert np.all(linearized_source(cfg, GRID, path, d)[:, 40] == 0.0)
    with pytest.raises(ShapeError):
        linearized_source(cfg, GRID, path, np.zeros((3, 2)))


def test_linearized_source_matches_central_difference():
    cfg = ModelConfig()
    rng = np.random.default_rng(1)
    path = wiggly_path(GRID, 1)
    d = rng.standard_normal(path.values.shape)
    eps = 1e-5
    fd = (source_field(cfg, GRID, path.with_values(path.values + eps * d))
          - source_field(cfg, GRID, path.with_values(path.values - eps * d))) / (2 * eps)
    exact = linearized_source(cfg, GRID, path, d)
    assert np.linalg.norm(fd - exact) <= 1e-7 * np.linalg.norm(exact)


@settings(max_examples=30)
@given(st.integers(0, 2**31), st.floats(-3.0, 3.0))
def test_linearized_source_linear(seed, a):
    cfg = ModelConfig()
    rng = np.random.default_rng(seed)
    path = wiggly_path(GRID, seed)
    d1, d2 = rng.standard_normal((2,) + path.values.shape)
    lhs = linearized_source(cfg, GRID, path, d1 + a * d2)
    rhs = linearized_source(cfg, GRID, path, d1) + a * linearized_source(cfg, GRID, path, d2)
    assert np.linalg.norm(lhs - rhs) <= 1e-14 * (np.linalg.norm(lhs) + np.linalg.norm(rhs)) + 1e-300


def test_second_source_examples():
    cfg = ModelConfig()
    path = _on_node_path(GRID, 40)
    e1 = np.tile([1.0, 0.0], (GRID.nt + 1, 1))
    e2 = np.tile([0.0, 1.0], (GRID.nt + 1, 1))
    assert np.all(second_source(cfg, GRID, path, e1, e2)[:, 40] == 0.0)
    assert np.all(second_source(cfg, GRID, path, e1, e1)[:, 40] == -1.0)


@settings(max_examples=30)
@given(st.integers(0, 2**31))
def test_second_source_symmetric(seed):
    cfg = ModelConfig()
    rng = np.random.default_rng(seed)
    path = wiggly_path(GRID, seed)
    d1, d2 = rng.standard_normal((2,) + path.values.shape)
    assert np.array_equal(second_source(cfg, GRID, path, d1, d2), second_source(cfg, GRID, path, d2, d1))


def test_second_difference_matches_scaled_second_source():
    cfg = ModelConfig()
    rng = np.random.default_rng(2)
    path = wiggly_path(GRID, 2)
    d = rng.standard_normal(path.values.shape)
    eps = 1e-4
    f = [source_field(cfg, GRID, path.with_values(path.values + k * eps * d)) for k in (-1, 0, 1)]
    fd = (f[2] - 2 * f[1] + f[0]) / eps**2
    exact = cfg.c_R * second_source(cfg, GRID, path, d, d)
    assert np.linalg.norm(fd - exact) <= 1e-5 * np.linalg.norm(exact)
