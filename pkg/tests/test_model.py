import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lasopt.model import (BOTTOM, SIDE, TOP, ConfigError, DiskRegion, LaserPath, ModelConfig, ShapeError,
                          SlabGrid, SuperellipseRegion, TargetSpec, constraint_hessian_form,
                          constraint_jacobian_apply, constraint_trace, h1_seminorm_sq)

finite = st.floats(-2.0, 2.0, allow_nan=False, allow_infinity=False)


def path_arrays(n=st.integers(3, 12)):
    return n.flatmap(lambda k: arrays(np.float64, (k, 2), elements=finite))


def test_seminorm_constant_path_is_zero():
    assert h1_seminorm_sq(LaserPath.constant((0.3, 0.7), 10)) == 0.0


def test_seminorm_unit_speed_line():
    T = 2.5
    path = LaserPath.line((0.0, 0.0), (T, 0.0), 17, T)
    assert h1_seminorm_sq(path) == pytest.approx(T, rel=1e-14)


def test_seminorm_matches_fine_interpolant_oracle():
    rng = np.random.default_rng(3)
    path = LaserPath(rng.standard_normal((5, 2)), 1.0)
    s = np.linspace(0.0, 1.0, 4 * 2500 + 1)  # nodes of the path are fine-grid points
    fine = np.column_stack([np.interp(s, path.times, path.values[:, k]) for k in range(2)])
    oracle = np.sum(np.diff(fine, axis=0) ** 2) / np.diff(s)[0]
    assert h1_seminorm_sq(path) == pytest.approx(oracle, rel=1e-12)


@given(path_arrays(), finite, finite)
def test_seminorm_shift_invariant(values, a, b):
    path = LaserPath(values)
    shifted = LaserPath(values + np.array([a, b]))
    assert math.isclose(h1_seminorm_sq(path), h1_seminorm_sq(shifted), rel_tol=1e-9, abs_tol=1e-9)


def test_constraint_trace_center_and_boundary():
    unit = DiskRegion((0.2, -0.1), 1.0)
    assert np.all(constraint_trace(LaserPath.constant((0.2, -0.1), 4), unit) == -1.0)
    assert np.allclose(constraint_trace(LaserPath.constant((1.2, -0.1), 4), unit), 0.0, atol=1e-15)


def test_constraint_trace_chain_rule_first_order():
    region = DiskRegion((0.0, 0.0), 1.0)
    errors = []
    for nt in (20, 40, 80, 160):
        t = np.linspace(0.0, 1.0, nt + 1)
        path = LaserPath(np.column_stack([np.cos(3 * t), 0.5 * np.sin(2 * t)]))
        g = constraint_trace(path, region)
        grad = region.grad(path.values[:-1])
        approx = np.einsum("ij,ij->i", grad, np.diff(path.values, axis=0))
        errors.append(np.max(np.abs(np.diff(g) - approx)) / path.dt)
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders > 0.9)


def test_feasibility_matches_membership():
    region = DiskRegion((0.0, 0.0), 1.0)
    path = LaserPath([[0.0, 0.0], [0.5, 0.5], [1.0, 0.2]])
    g = constraint_trace(path, region)
    assert list(g <= 0) == list(region.contains(path.values)) == [True, True, False]


def test_jacobian_examples():
    region = DiskRegion((0.0, 0.0), 1.0)
    path = LaserPath.constant((1.0, 0.0), 3)
    assert np.all(constraint_jacobian_apply(path, region, np.zeros((4, 2))) == 0.0)
    d = np.tile([1.0, 0.0], (4, 1))
    assert np.all(constraint_jacobian_apply(path, region, d) == 2.0)
    with pytest.raises(ShapeError):
        constraint_jacobian_apply(path, region, np.zeros((3, 2)))


@pytest.mark.parametrize("region", [DiskRegion((0.5, 0.5), 0.3), SuperellipseRegion((0.5, 0.5), (0.3, 0.2), 4)])
def test_jacobian_matches_central_difference(region):
    rng = np.random.default_rng(1)
    path = LaserPath(0.5 + 0.2 * rng.standard_normal((9, 2)))
    d = rng.standard_normal((9, 2))
    eps = 1e-6
    fd = (constraint_trace(path.with_values(path.values + eps * d), region)
          - constraint_trace(path.with_values(path.values - eps * d), region)) / (2 * eps)
    assert np.allclose(constraint_jacobian_apply(path, region, d), fd, rtol=1e-8, atol=1e-8)


@given(path_arrays(st.just(6)), arrays(np.float64, (6, 2), elements=finite),
       arrays(np.float64, (6, 2), elements=finite), finite)
def test_jacobian_linear(values, d1, d2, a):
    region = SuperellipseRegion((0.0, 0.0), (1.0, 2.0), 6)
    path = LaserPath(values)
    lhs = constraint_jacobian_apply(path, region, d1 + a * d2)
    rhs = constraint_jacobian_apply(path, region, d1) + a * constraint_jacobian_apply(path, region, d2)
    scale = 1.0 + np.abs(constraint_jacobian_apply(path, region, np.abs(d1) + abs(a) * np.abs(d2)))
    assert np.all(np.abs(lhs - rhs) <= 1e-12 * scale)


def test_hessian_form_disk_and_zero():
    rng = np.random.default_rng(2)
    region = DiskRegion((0.5, 0.5), 0.3)
    path = LaserPath(rng.random((7, 2)))
    d1, d2 = rng.standard_normal((2, 7, 2))
    assert np.allclose(constraint_hessian_form(path, region, d1, d2), 2.0 * np.sum(d1 * d2, axis=1), rtol=1e-15)
    assert np.all(constraint_hessian_form(path, region, np.zeros((7, 2)), d2) == 0.0)


@given(path_arrays(st.just(5)), arrays(np.float64, (5, 2), elements=finite),
       arrays(np.float64, (5, 2), elements=finite))
def test_hessian_form_symmetric(values, d1, d2):
    region = SuperellipseRegion((0.1, 0.0), (0.7, 1.3), 4)
    path = LaserPath(values)
    assert np.array_equal(constraint_hessian_form(path, region, d1, d2),
                          constraint_hessian_form(path, region, d2, d1))


@given(arrays(np.float64, (2,), elements=finite), arrays(np.float64, (2,), elements=finite))
def test_disk_taylor_identity_exact(x, e):
    region = DiskRegion((0.3, -0.4), 0.8)
    lhs = region.value(x + e)
    rhs = region.value(x) + region.grad(x) @ e + 0.5 * e @ region.hess(x) @ e
    assert math.isclose(lhs, rhs, rel_tol=1e-12, abs_tol=1e-12)


@pytest.mark.parametrize("region", [DiskRegion((0.5, 0.5), 0.3), SuperellipseRegion((0.5, 0.5), (0.3, 0.2), 6)])
def test_level_set_gradient_nonvanishing_on_boundary(region):
    angle = np.linspace(0.0, 2 * np.pi, 400, endpoint=False)
    pts = []
    for a in angle:
        u = np.array([np.cos(a), np.sin(a)])
        lo, hi = 0.0, 2.0  # bisection along the ray for g = 0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if region.value(region.center + mid * u) < 0 else (lo, mid)
        pts.append(region.center + lo * u)
    pts = np.array(pts)
    assert np.all(np.abs(region.value(pts)) <= 1e-10)
    assert np.all(np.linalg.norm(region.grad(pts), axis=1) > 0)
    H = region.hess(pts)
    assert np.array_equal(H, np.transpose(H, (0, 2, 1)))


def test_region_parameter_errors():
    with pytest.raises(ConfigError):
        DiskRegion((0, 0), -1.0)
    with pytest.raises(ConfigError):
        SuperellipseRegion((0, 0), (1, 1), 3)


def test_grid_tags_and_face_areas():
    grid = SlabGrid(Lx=1.3, Ly=0.7, thickness=0.2, nx=6, ny=4, nz=3)
    tags = grid.tags.reshape(grid.shape)
    assert np.all(tags[1:-1, 1:-1, 1:-1] == 0)
    boundary = np.ones(grid.shape, dtype=bool)
    boundary[1:-1, 1:-1, 1:-1] = False
    assert np.all(np.isin(tags[boundary], [TOP, SIDE, BOTTOM]))
    areas = {TOP: 1.3 * 0.7, BOTTOM: 1.3 * 0.7, SIDE: 2 * (1.3 + 0.7) * 0.2}
    for tag, area in areas.items():
        assert grid.face_weights[tag].sum() == pytest.approx(area, rel=1e-12)
    assert grid.volume_weights.sum() == pytest.approx(1.3 * 0.7 * 0.2, rel=1e-12)


@pytest.mark.parametrize("kwargs", [{"nx": 2}, {"nz": 1}, {"nt": 1}, {"thickness": 0.0}])
def test_grid_validation(kwargs):
    with pytest.raises(ConfigError):
        SlabGrid(**kwargs)


def test_window_constraint_names_field():
    with pytest.raises(ConfigError) as info:
        ModelConfig(r_window=0.4, T_final=1.0)
    assert info.value.field == "r_window"


@pytest.mark.parametrize("name,value", [("rho", 0.0), ("kappa", -1.0), ("alpha_abs", 1.5), ("lambda_gamma", 0.0),
                                        ("beta_T", -0.1), ("beam_radius", 0.0)])
def test_config_validation(name, value):
    with pytest.raises(ConfigError) as info:
        ModelConfig(**{name: value})
    assert info.value.field == name


def test_path_node_count_checked_against_grid():
    with pytest.raises(ShapeError):
        LaserPath.constant((0.5, 0.5), 10).check_matches(SlabGrid(nt=20))
    with pytest.raises(ShapeError):
        LaserPath(np.zeros((0, 2)))


def test_melt_column_target_uses_column_or_region():
    grid = SlabGrid(nx=5, ny=5, nz=2)
    target = TargetSpec("melt_column", 2.0, 0.5)
    values = target.evaluate(grid, DiskRegion((0.5, 0.5), 0.2))
    center = np.all(np.isclose(grid.coords[:, :2], 0.5), axis=1)
    assert np.all(values[center] == 2.0) and np.all(values[~center] == 0.5)
    with pytest.raises(ConfigError):
        target.evaluate(grid, None)
    col = TargetSpec("melt_column", 1.0, 0.0, (0.0, 0.0, 0.1)).evaluate(grid, None)
    assert col.sum() == 2.0  # corner column holds the two corner nodes through the depth


@settings(max_examples=25)
@given(st.floats(0.05, 0.33))
def test_tau_min_is_three_windows(r):
    cfg = ModelConfig(r_window=r)
    assert cfg.tau_min == pytest.approx(3 * r)
