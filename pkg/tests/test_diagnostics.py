import csv
import math

import numpy as np
import pytest

from lasopt.diagnostics import (INDEFINITE, POSITIVE, SEMIDEFINITE, critical_cone, full_metric, gradient_check,
                                growth_check, kkt_check, normal_cone_ok, regularity_check, soc_check)
from lasopt.model import DiskRegion, LaserPath, ModelConfig, ShapeError, SlabGrid
from lasopt.objective import LagrangianHessian
from lasopt.optimize import MultiplierEstimate, inner_solve
from lasopt.pde import adjoint_solve, forward_solve

from conftest import wiggly_path

GRID = SlabGrid(nx=5, ny=5, nz=3, nt=20)
QUIET = ModelConfig(laser_power=0.0, lambda_Q=0.0, lambda_Omega=0.0)
N = GRID.nt + 1


def _estimate(lam, mu=0.0):
    lam = np.asarray(lam, dtype=float)
    return MultiplierEstimate(lam, mu, lam > 0, 0.0, 0.0)


def test_normal_cone_sign_logic():
    cfg = ModelConfig()
    lo, hi, mid = cfg.tau_min, cfg.T_final, 0.5 * (cfg.tau_min + cfg.T_final)
    assert normal_cone_ok(cfg, mid, 0.0, 1e-8) and not normal_cone_ok(cfg, mid, 1e-3, 1e-8)
    assert normal_cone_ok(cfg, lo, -2.0, 1e-8) and not normal_cone_ok(cfg, lo, 2.0, 1e-8)
    assert normal_cone_ok(cfg, hi, 2.0, 1e-8) and not normal_cone_ok(cfg, hi, -2.0, 1e-8)


def test_kkt_interior_stationary_point(small_config):
    tol = 1e-7
    region = DiskRegion((0.5, 0.5), 2.0)
    res = inner_solve(small_config, GRID, (LaserPath.constant((0.5, 0.5), GRID.nt), 0.75), 1.0, tol,
                      region=region, max_iter=1000)
    assert res.converged and small_config.tau_min < res.tau < small_config.T_final
    rep = kkt_check(small_config, GRID, res.path, res.tau, _estimate(np.zeros(N)), region=region, tol=tol)
    assert rep.passed, rep.to_dict()
    assert rep.residual_gamma <= tol and rep.residual_tau <= tol and rep.complementarity == 0.0


def test_kkt_random_path_fails_by_a_wide_margin(small_config, disk):
    tol = 1e-6
    rep = kkt_check(small_config, GRID, wiggly_path(GRID, 11, amplitude=0.2), 0.75, _estimate(np.zeros(N)),
                    region=disk, tol=tol)
    assert not rep.passed and rep.verdict == "FAIL"
    assert rep.residual_gamma > 100 * tol
    assert all(math.isfinite(v) and v >= 0 for v in (rep.residual_gamma, rep.residual_tau, rep.complementarity))


def test_kkt_rejects_misshaped_multiplier(small_config, disk):
    with pytest.raises(ShapeError):
        kkt_check(small_config, GRID, wiggly_path(GRID), 0.75, np.zeros(5), region=disk)


def test_kkt_desk_solution_passes(desk_solution):
    run, report = desk_solution
    tol = 10 * run.schedule.tolerances()[-1]
    rep = kkt_check(run.model, run.grid, report.path, report.tau, report.multiplier, region=run.region,
                    theta=run.theta, tol=tol)
    assert rep.passed, rep.to_dict()
    assert rep.min_lambda >= 0.0


def test_kkt_beta_dominated_lower_bound(beta_solution):
    run, report = beta_solution
    tol = 10 * run.schedule.tolerances()[-1]
    assert report.tau == run.model.tau_min
    mult = report.multiplier
    rep = kkt_check(run.model, run.grid, report.path, report.tau, mult, region=run.region, theta=run.theta,
                    tol=tol)
    assert rep.passed, rep.to_dict()
    assert rep.tau_position == "lower"
    assert rep.grad_tau > run.model.beta_T * 0.5 > 0  # the time price dominates the tracking terms
    assert mult.mu == -rep.grad_tau and mult.mu <= 0.0


def test_desk_complementarity_support(desk_solution):
    _, report = desk_solution
    est = report.multiplier
    assert np.all(est.lam[~est.active] == 0.0)


def test_cone_full_space_without_active_nodes():
    path = LaserPath.constant((0.5, 0.5), GRID.nt)
    cone = critical_cone(QUIET, GRID, path, 0.8, _estimate(np.zeros(N)), region=DiskRegion((0.5, 0.5), 0.3))
    assert cone.tau_status == "free" and not cone.includes_cost_row
    assert cone.dim == 2 * N + 1
    assert np.allclose(cone.basis.T @ cone.basis, np.eye(cone.dim), atol=1e-12)


def test_cone_one_strong_node_drops_radial_direction():
    region = DiskRegion((0.5, 0.5), 0.3)
    values = np.full((N, 2), 0.5)
    values[5] = [0.8, 0.5]
    lam = np.zeros(N)
    lam[5] = 2.0
    # tol large: the cost row is not wanted for this counting check
    cone = critical_cone(QUIET, GRID, LaserPath(values), 0.8, _estimate(lam), region=region, tol=1e3)
    assert list(np.flatnonzero(cone.strong_active)) == [5] and not cone.weak_active.any()
    assert cone.dim == 2 * N
    radial = np.zeros(2 * N + 1)
    radial[10] = 1.0
    assert np.max(np.abs(cone.basis.T @ radial)) <= 1e-12
    assert cone.membership_residual <= 1e-10
    for z in cone.basis.T[:20]:
        assert abs(region.grad(values[5]) @ z[10:12]) <= 1e-10 and cone.contains(z)


def test_cone_shape_error():
    with pytest.raises(ShapeError):
        critical_cone(QUIET, GRID, LaserPath.constant((0.5, 0.5), 10), 0.8, np.zeros(N),
                      region=DiskRegion((0.5, 0.5), 0.3))


def test_cone_weak_nodes_give_inward_generators():
    region = DiskRegion((0.5, 0.5), 0.3)
    values = np.full((N, 2), 0.5)
    values[3] = [0.5, 0.8]
    cone = critical_cone(QUIET, GRID, LaserPath(values), 0.8, _estimate(np.zeros(N)), region=region, tol=1e3)
    assert list(np.flatnonzero(cone.weak_active)) == [3]
    gen = cone.generators[:, 0]
    assert gen[7] < 0 and cone.contains(gen)
    assert not cone.contains(-gen)


def test_degenerate_soc_is_semidefinite_on_constants():
    cfg = QUIET.replace(beta_T=1.0)
    region = DiskRegion((0.5, 0.5), 0.3)
    path = LaserPath.constant((0.5, 0.5), GRID.nt)
    tau = cfg.tau_min
    mult = _estimate(np.zeros(N), mu=-1.0)
    rep = kkt_check(cfg, GRID, path, tau, mult, region=region)
    assert rep.passed
    cone = critical_cone(cfg, GRID, path, tau, mult, region=region)
    assert cone.tau_status == "strong"
    soc = soc_check(cfg, GRID, path, tau, mult, cone, region=region)
    assert soc.verdict == SEMIDEFINITE and soc.verdict != POSITIVE
    z = np.array(soc.attaining_direction)
    d, dtau = cone.split(z)
    assert np.max(np.abs(np.diff(d, axis=0))) <= 1e-8 * np.max(np.abs(d))
    assert abs(dtau) <= 1e-12


def test_negative_curvature_is_indefinite():
    # a single strong node with a negative multiplier bends the form down at that node
    region = DiskRegion((0.5, 0.5), 0.3)
    values = np.full((N, 2), 0.5)
    values[10] = [0.8, 0.5]
    lam = np.zeros(N)
    lam[10] = -1e3
    cone = critical_cone(QUIET, GRID, LaserPath(values), 0.8, np.zeros(N), region=region, tol=1e3)
    soc = soc_check(QUIET, GRID, LaserPath(values), 0.8, lam, cone, region=region)
    assert soc.verdict == INDEFINITE


def test_multiplier_curvature_difference_is_exact(small_config, disk):
    path = wiggly_path(GRID, 3)
    lam = np.zeros(N)
    lam[6] = 4.0
    H0 = LagrangianHessian(small_config, GRID, path, 0.75, np.zeros(N), disk)
    H1 = LagrangianHessian(small_config, GRID, path, 0.75, lam, disk)
    rng = np.random.default_rng(4)
    for _ in range(5):
        d = rng.standard_normal(path.values.shape)
        diff = H1.form((d, 0.2), (d, 0.2)) - H0.form((d, 0.2), (d, 0.2))
        expected = 2.0 * lam[6] * GRID.time_weights[6] * float(d[6] @ d[6])
        assert diff == pytest.approx(expected, rel=1e-9)


def test_hessian_vector_product_matches_form_on_desk(desk_solution):
    run, report = desk_solution
    H = LagrangianHessian(run.model, run.grid, report.path, report.tau, report.multiplier.lam, run.region)
    rng = np.random.default_rng(5)
    for _ in range(10):
        d1, d2 = rng.standard_normal((2,) + report.path.values.shape)
        t1, t2 = rng.standard_normal(2)
        hv, ht = H.matvec((d1, t1))
        via_product = float(np.sum(hv * d2) + ht * t2)
        direct = H.form((d1, t1), (d2, t2))
        assert via_product == pytest.approx(direct, rel=1e-8)


def test_desk_cone_nesting_and_positive_curvature(desk_solution, desk_soc):
    run, report = desk_solution
    cone, soc = desk_soc
    assert soc.lanczos_converged
    assert soc.subspace_min >= soc.cone_min
    assert soc.verdict == POSITIVE
    Gm = full_metric(run.grid.nt, run.grid.T_final)
    z = cone.basis @ np.random.default_rng(6).standard_normal(cone.dim)
    assert cone.contains(z)
    # the subspace minimum is a Rayleigh quotient, so no unit basis direction goes below it
    H = LagrangianHessian(run.model, run.grid, report.path, report.tau, report.multiplier.lam, run.region)
    z /= math.sqrt(z @ Gm @ z)
    assert H.form(cone.split(z), cone.split(z)) >= soc.subspace_min - 1e-10


def test_desk_quadratic_growth(desk_solution, desk_soc):
    run, report = desk_solution
    cone, soc = desk_soc
    growth = growth_check(run.model, run.grid, report.path, report.tau, report.multiplier, cone, soc.cone_min,
                          region=run.region, theta=run.theta)
    assert growth["passed"], (growth["min_growth"], growth["bound"])


def test_regularity_trivial_minimizer(tmp_path):
    path = LaserPath.constant((0.5, 0.5), GRID.nt)
    region = DiskRegion((0.5, 0.5), 0.3)
    state = forward_solve(QUIET, GRID, path)
    adj = adjoint_solve(QUIET, GRID, path, 0.8, state)
    rep = regularity_check(QUIET, GRID, path, 0.8, np.zeros(N), adj, region=region)
    assert rep.velocity_start == rep.velocity_end == rep.h2_proxy == 0.0
    assert rep.ode_residual_max == 0.0 and rep.mode == "limit" and rep.verdict == "REPORT"
    rep.write_csv(tmp_path / "r.csv")
    with (tmp_path / "r.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "residual_x", "residual_y", "residual_norm"] and len(rows) == GRID.nt


def test_regularity_anchored_mode_reduces_to_limit_at_anchor(small_config, disk):
    path = wiggly_path(GRID, 2)
    state = forward_solve(small_config, GRID, path)
    adj = adjoint_solve(small_config, GRID, path, 0.75, state)
    base = regularity_check(small_config, GRID, path, 0.75, np.zeros(N), adj, region=disk)
    anchored = regularity_check(small_config, GRID, path, 0.75, np.zeros(N), adj, region=disk, M=2.0, anchor=path)
    assert anchored.mode == "anchored"
    assert np.allclose(np.array(anchored.nodes), np.array(base.nodes), rtol=1e-14, atol=0)


def test_gradient_check_small_grid(small_config, disk):
    out = gradient_check(small_config, GRID, wiggly_path(GRID, 8), 0.75, region=disk)
    assert out["passed"], out["max_rel_error"]
    assert len(out["rows"]) == 11
