"""First- and second-order optimality diagnostics at computed solutions."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from lasopt import objective
from lasopt.lanczos import smallest_eigenpair
from lasopt.model import LaserPath, LevelSetRegion, ModelConfig, ShapeError, SlabGrid, constraint_trace
from lasopt.optimize import PathMetric
from lasopt.pde import adjoint_solve, forward_solve
from lasopt.problem import get_problem

POSITIVE, SEMIDEFINITE, INDEFINITE = "POSITIVE", "SEMIDEFINITE", "INDEFINITE"


def _lam(multiplier, n):
    lam = np.asarray(getattr(multiplier, "lam", multiplier), dtype=float)
    if lam.shape != (n,):
        raise ShapeError(f"multiplier has shape {lam.shape}, expected ({n},)")
    return lam


def _tau_position(config: ModelConfig, tau: float, atol: float = 1e-12) -> str:
    if tau <= config.tau_min + atol * config.T_final:
        return "lower"
    if tau >= config.T_final - atol * config.T_final:
        return "upper"
    return "interior"


def normal_cone_ok(config: ModelConfig, tau: float, mu: float, tol: float) -> bool:
    """mu in the normal cone of [3r, T] at tau, up to tol.

    The cone is {0} inside, (-inf, 0] at the lower end and [0, inf) at the upper end.
    """
    where = _tau_position(config, tau)
    if where == "interior":
        return abs(mu) <= tol
    if where == "lower":
        return mu <= tol
    return mu >= -tol


@dataclass
class KKTReport:
    residual_gamma: float
    residual_tau: float
    projected_tau_residual: float
    complementarity: float
    min_lambda: float
    mu: float
    grad_tau: float
    tau_position: str
    normal_cone_ok: bool
    tol_gamma: float
    tol_tau: float
    tol_complementarity: float
    lambda_l1: float
    scale: float
    passed: bool

    @property
    def verdict(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["verdict"] = self.verdict
        return out


def _first_order(config, grid, path, tau, region, theta):
    state = forward_solve(config, grid, path, theta=theta, region=region)
    adj = adjoint_solve(config, grid, path, tau, state, theta=theta, region=region)
    gg = objective.grad_gamma(config, grid, path, tau, state, adj, theta=theta)
    gt = objective.grad_tau(config, grid, path, tau, state, theta=theta, region=region)
    return state, adj, gg, gt


def lagrangian_path_gradient(config, grid, path, tau, multiplier, region, *, theta=1.0):
    """Euclidean gradient of the Lagrangian in the path, plus the tau derivative of the cost."""
    lam = _lam(multiplier, grid.nt + 1)
    _, _, gg, gt = _first_order(config, grid, path, tau, region, theta)
    vec = gg.vector()
    if region is not None:
        vec = vec + (grid.time_weights * lam)[:, None] * region.grad(path.values)
    return vec, gt


def kkt_check(config: ModelConfig, grid: SlabGrid, path: LaserPath, tau: float, multiplier, *,
              region: LevelSetRegion, theta: float = 1.0, tol: float = 1e-6, tol_tau: float | None = None
              ) -> KKTReport:
    """Residuals of the multiplier system at (path, tau, lambda, mu)."""
    lam = _lam(multiplier, grid.nt + 1)
    mu = float(getattr(multiplier, "mu", 0.0))
    tol_tau = tol if tol_tau is None else tol_tau
    vec, gt = lagrangian_path_gradient(config, grid, path, tau, lam, region, theta=theta)
    metric = PathMetric(grid.nt, grid.T_final)
    res_gamma = metric.dual_norm(vec)
    lo, hi = config.tau_min, config.T_final
    proj = abs(tau - min(max(tau - gt, lo), hi))
    w = grid.time_weights
    g = constraint_trace(path, region)
    comp = abs(float(np.dot(w * lam, g)))
    lam_l1 = float(np.dot(w, np.abs(lam)))
    scale = float(region.scale)
    tol_comp = 1e-6 * lam_l1 * scale
    cone_ok = normal_cone_ok(config, tau, mu, tol_tau)
    res_tau = abs(gt + mu)
    passed = (res_gamma <= tol and res_tau <= tol_tau and float(np.min(lam)) >= 0.0 and cone_ok
              and comp <= tol_comp)
    return KKTReport(res_gamma, res_tau, proj, comp, float(np.min(lam)), mu, gt, _tau_position(config, tau),
                     cone_ok, tol, tol_tau, tol_comp, lam_l1, scale, passed)


@dataclass
class CriticalConeDescription:
    strong_active: np.ndarray
    weak_active: np.ndarray
    basis: np.ndarray
    generators: np.ndarray
    rows: np.ndarray
    tau_status: str
    includes_cost_row: bool
    eps_act: float
    eps_mult: float
    membership_residual: float
    shape: tuple

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def split(self, z: np.ndarray) -> tuple[np.ndarray, float]:
        return z[:-1].reshape(self.shape), float(z[-1])

    def contains(self, z: np.ndarray, atol: float = 1e-10) -> bool:
        """Membership of a stacked direction in the cone (equalities and inequalities)."""
        n = self.shape[0]
        eq = self._equality_rows
        if eq.size and np.max(np.abs(eq @ z)) > atol * max(1.0, np.linalg.norm(z)):
            return False
        d, dtau = self.split(z)
        ok = True
        for i in np.flatnonzero(self.weak_active):
            ok &= float(self._grads[i] @ d[i]) <= atol * max(1.0, np.linalg.norm(z))
        if self.tau_status == "weak_lower":
            ok &= dtau >= -atol
        elif self.tau_status == "weak_upper":
            ok &= dtau <= atol
        return bool(ok) and len(d) == n

    def to_dict(self) -> dict:
        return {
            "strong_active": np.flatnonzero(self.strong_active).tolist(),
            "weak_active": np.flatnonzero(self.weak_active).tolist(),
            "dim": self.dim,
            "n_generators": int(self.generators.shape[1]),
            "tau_status": self.tau_status,
            "includes_cost_row": self.includes_cost_row,
            "eps_act": self.eps_act,
            "eps_mult": self.eps_mult,
            "membership_residual": self.membership_residual,
        }


def critical_cone(config: ModelConfig, grid: SlabGrid, path: LaserPath, tau: float, multiplier,
                  eps_act: float | None = None, eps_mult: float | None = None, *, region: LevelSetRegion,
                  theta: float = 1.0, tol: float = 1e-6) -> CriticalConeDescription:
    """Node sets, equality-subspace basis and inequality generators of the critical cone.

    Directions are stacked as (path.ravel(), dtau). The equality subspace
    holds grad g . d = 0 on both strongly and weakly active nodes, so it is
    the largest subspace inside the cone; weakly active nodes contribute the
    inward generators -grad g / |grad g|^2.
    """
    n_nodes = grid.nt + 1
    if path.values.shape[0] != n_nodes:
        raise ShapeError("path does not match the grid")
    lam = _lam(multiplier, n_nodes)
    mu = float(getattr(multiplier, "mu", 0.0))
    eps_act = 1e-6 * region.scale if eps_act is None else eps_act
    eps_mult = 1e-8 * float(np.max(lam, initial=0.0)) if eps_mult is None else eps_mult
    g = constraint_trace(path, region)
    grads = region.grad(path.values)
    strong = lam > eps_mult
    weak = (g >= -eps_act) & ~strong
    n = 2 * n_nodes + 1
    rows, is_eq = [], []
    for i in np.flatnonzero(strong | weak):
        row = np.zeros(n)
        row[2 * i: 2 * i + 2] = grads[i]
        rows.append(row)
        is_eq.append(bool(strong[i]))
    where = _tau_position(config, tau)
    mu_tol = max(eps_mult, tol)
    if where == "interior":
        tau_status = "free"
    elif abs(mu) > mu_tol:
        tau_status = "strong"
    else:
        tau_status = "weak_" + where
    if tau_status != "free":
        row = np.zeros(n)
        row[-1] = 1.0
        rows.append(row)
        is_eq.append(tau_status == "strong")
    vec, gt = lagrangian_path_gradient(config, grid, path, tau, lam, region, theta=theta)
    metric = PathMetric(grid.nt, grid.T_final)
    include_cost = metric.dual_norm(vec) > 10.0 * tol
    if include_cost:
        cost_grad, _ = lagrangian_path_gradient(config, grid, path, tau, np.zeros(n_nodes), region, theta=theta)
        rows.append(np.append(cost_grad.ravel(), gt))
        is_eq.append(True)
    R = np.array(rows) if rows else np.zeros((0, n))
    basis = sla.null_space(R) if rows else np.eye(n)
    gens = []
    for i in np.flatnonzero(weak):
        e = np.zeros(n)
        e[2 * i: 2 * i + 2] = -grads[i] / max(float(grads[i] @ grads[i]), 1e-300)
        gens.append(e)
    if tau_status.startswith("weak"):
        e = np.zeros(n)
        e[-1] = 1.0 if tau_status == "weak_lower" else -1.0
        gens.append(e)
    G = np.array(gens).T if gens else np.zeros((n, 0))
    resid = float(np.max(np.abs(R @ basis))) if rows and basis.size else 0.0
    out = CriticalConeDescription(strong, weak, basis, G, R, tau_status, include_cost, float(eps_act),
                                  float(eps_mult), resid, path.values.shape)
    out._grads = grads
    out._equality_rows = R[np.array(is_eq, dtype=bool)] if rows else R
    return out


def full_metric(nt: int, T: float) -> np.ndarray:
    """H1 x R Gram matrix on stacked directions (x_0, y_0, x_1, ..., dtau)."""
    m = PathMetric(nt, T).matrix
    n = 2 * (nt + 1)
    Gm = np.zeros((n + 1, n + 1))
    Gm[:n, :n] = np.kron(m, np.eye(2))
    Gm[n, n] = 1.0
    return Gm


@dataclass
class SOCReport:
    verdict: str
    subspace_min: float
    cone_sample_min: float
    cone_min: float
    attaining_direction: list
    attaining_source: str
    tolerance: float
    scale: float
    lanczos_residual: float
    lanczos_converged: bool
    n_hessian_products: int
    n_samples: int
    cone: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _hessian(config, grid, path, tau, multiplier, region, theta):
    lam = _lam(multiplier, grid.nt + 1)
    return objective.LagrangianHessian(config, grid, path, tau, lam, region, theta=theta)


def soc_check(config: ModelConfig, grid: SlabGrid, path: LaserPath, tau: float, multiplier,
              cone: CriticalConeDescription, *, region: LevelSetRegion, theta: float = 1.0,
              n_samples: int = 200, seed: int = 0, rel_tol: float = 1e-8, krylov_dim: int = 80,
              hessian=None) -> SOCReport:
    """Minimum of the Lagrangian Hessian form over unit directions of the critical cone.

    Unit length is measured in the H1 x R metric. The equality subspace is
    handled exactly by Lanczos on the metric-whitened projected Hessian; the
    inequality part is explored by random nonnegative generator combinations.
    """
    H = hessian or _hessian(config, grid, path, tau, multiplier, region, theta)
    Gm = full_metric(grid.nt, grid.T_final)
    Z = cone.basis
    k = Z.shape[1]
    sub_min, sub_dir, lz_res, lz_conv, largest = math.inf, None, 0.0, True, 0.0
    if k > 0:
        C = sla.cholesky(Z.T @ Gm @ Z)  # upper, Z^T G Z = C^T C

        def to_full(u):
            return Z @ sla.solve_triangular(C, u)

        def op(u):
            hv, ht = H.matvec(cone.split(to_full(u)))
            return sla.solve_triangular(C, Z.T @ np.append(hv.ravel(), ht), trans="T")

        res = smallest_eigenpair(op, k, krylov_dim=min(krylov_dim, k), tol=1e-9, seed=seed)
        sub_min, sub_dir = res.value, to_full(res.vector)
        lz_res, lz_conv, largest = res.residual, res.converged, res.largest
    rng = np.random.default_rng(seed)
    samp_min, samp_dir = math.inf, None
    Gen = cone.generators
    for _ in range(n_samples):
        z = Z @ rng.standard_normal(k) if k else np.zeros(Gm.shape[0])
        if Gen.shape[1]:
            z = z + Gen @ np.abs(rng.standard_normal(Gen.shape[1]))
        nrm = math.sqrt(float(z @ Gm @ z))
        if nrm == 0.0:
            continue
        z /= nrm
        val = H.form(cone.split(z), cone.split(z))
        if val < samp_min:
            samp_min, samp_dir = val, z
    scale = max(config.lambda_gamma, abs(largest), abs(samp_min) if math.isfinite(samp_min) else 0.0)
    tol = rel_tol * scale
    if sub_min <= samp_min:
        cone_min, direction, source = sub_min, sub_dir, "subspace"
    else:
        cone_min, direction, source = samp_min, samp_dir, "sample"
    if cone_min > tol:
        verdict = POSITIVE
    elif cone_min >= -tol:
        verdict = SEMIDEFINITE
    else:
        verdict = INDEFINITE
    return SOCReport(verdict, float(sub_min), float(samp_min), float(cone_min),
                     [] if direction is None else direction.tolist(), source, float(tol), float(scale),
                     float(lz_res), bool(lz_conv), int(H.n_solves), n_samples, cone.to_dict())


def _project_feasible(values: np.ndarray, region: LevelSetRegion, sweeps: int = 5) -> np.ndarray:
    x = values.copy()
    for _ in range(sweeps):
        g = region.value(x)
        bad = g > 0
        if not np.any(bad):
            break
        gr = region.grad(x[bad])
        x[bad] -= (g[bad] / np.sum(gr * gr, axis=1))[:, None] * gr
    return x


def growth_check(config: ModelConfig, grid: SlabGrid, path: LaserPath, tau: float, multiplier,
                 cone: CriticalConeDescription, margin: float, *, region: LevelSetRegion, theta: float = 1.0,
                 eps: float = 1e-3, n_samples: int = 50, seed: int = 1) -> dict:
    """Sampled Lagrangian growth along feasible cone perturbations against (margin/4) eps^2."""
    lam = _lam(multiplier, grid.nt + 1)
    Gm = full_metric(grid.nt, grid.T_final)
    rng = np.random.default_rng(seed)
    base = objective.lagrangian_value(config, grid, path, tau, lam, region, theta=theta)
    Z, Gen = cone.basis, cone.generators
    growths = []
    for _ in range(n_samples):
        z = Z @ rng.standard_normal(Z.shape[1]) if Z.shape[1] else np.zeros(Gm.shape[0])
        if Gen.shape[1]:
            z = z + Gen @ np.abs(rng.standard_normal(Gen.shape[1]))
        z /= math.sqrt(float(z @ Gm @ z))
        d, dtau = cone.split(z)
        values = _project_feasible(path.values + eps * d, region)
        t_new = min(max(tau + eps * dtau, config.tau_min), config.T_final)
        val = objective.lagrangian_value(config, grid, path.with_values(values), t_new, lam, region, theta=theta)
        growths.append(val - base)
    growths = np.array(growths)
    bound = 0.25 * margin * eps**2
    return {"eps": eps, "margin": margin, "bound": bound, "min_growth": float(growths.min()),
            "passed": bool(np.all(growths >= bound)), "growths": growths.tolist()}


@dataclass
class RegularityReport:
    velocity_start: float
    velocity_end: float
    h2_proxy: float
    ode_residual_l2: float
    ode_residual_max: float
    nodes: list
    mode: str
    verdict: str = "REPORT"

    def to_dict(self) -> dict:
        return asdict(self)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "residual_x", "residual_y", "residual_norm"])
            for row in self.nodes:
                writer.writerow(row)


def regularity_check(config: ModelConfig, grid: SlabGrid, path: LaserPath, tau: float, multiplier, adjoint,
                     *, region: LevelSetRegion, M: float = 0.0, anchor: LaserPath | None = None
                     ) -> RegularityReport:
    """Endpoint velocities, second-difference norm and the limit ODE residual.

    The ODE residual at interior nodes is lambda_gamma gamma'' - P - lambda grad g,
    with P assembled from the adjoint slice at the same time level. With M > 0
    the residual of the anchored equation
    P - (lambda_gamma gamma + M (gamma - anchor))'' + M (gamma - anchor) + lambda grad g
    is reported instead (sign flipped to match the first form when M = 0).
    """
    lam = _lam(multiplier, grid.nt + 1)
    dt = grid.dt
    x = path.values
    v = np.diff(x, axis=0) / dt
    acc = (x[2:] - 2 * x[1:-1] + x[:-2]) / dt**2
    h2 = float(math.sqrt(dt * np.sum(acc * acc)))
    xt = grid.top_xy[None, :, :] - x[:, None, :]
    ew = np.exp(-2.0 * np.sum(xt * xt, axis=-1) / config.beam_radius**2)
    p_top = np.asarray(getattr(adjoint, "values", adjoint))[:, grid.top_nodes]
    P = config.c_R * np.einsum("tn,n,tnk->tk", ew * p_top, grid.top_weights, xt)
    force = lam[:, None] * region.grad(x) if region is not None else np.zeros_like(x)
    if M and anchor is not None:
        e = x - anchor.values
        lhs = config.lambda_gamma * acc + M * (e[2:] - 2 * e[1:-1] + e[:-2]) / dt**2 - M * e[1:-1]
        mode = "anchored"
    else:
        lhs = config.lambda_gamma * acc
        mode = "limit"
    r = lhs - P[1:-1] - force[1:-1]
    norms = np.linalg.norm(r, axis=1)
    t = grid.times[1:-1]
    nodes = [[float(ti), float(a), float(b), float(c)] for ti, (a, b), c in zip(t, r, norms)]
    return RegularityReport(float(np.linalg.norm(v[0])), float(np.linalg.norm(v[-1])), h2,
                            float(math.sqrt(dt * np.sum(norms**2))), float(norms.max(initial=0.0)), nodes, mode)


def _window_points(tau: float, config: ModelConfig) -> np.ndarray:
    r = config.r_window
    return np.array([tau, tau - r, 0.5 * (tau - r), 0.5 * (tau + r)])


def _room(tau: float, config: ModelConfig, grid: SlabGrid, direction: float) -> float:
    """Largest tau step in the given direction keeping every window point inside its interval.

    Window points move by at most the step, so a node ahead at distance d
    limits the step to d (points moving at half speed only gain room).
    """
    u = direction * _window_points(tau, config) / grid.dt
    ahead = np.floor(u + 1e-7) + 1.0 - u
    return float(np.min(ahead) * grid.dt)


def gradient_check(config: ModelConfig, grid: SlabGrid, path: LaserPath, tau: float, *, region=None,
                   theta: float = 1.0, n_directions: int = 10, seed: int = 0, eps: float = 1e-5,
                   rtol: float = 1e-6) -> dict:
    """Adjoint gradients against central finite differences of the reduced cost.

    The tau step is kept inside one time interval for every window end point,
    where the cost is quadratic in tau.
    """
    rng = np.random.default_rng(seed)
    state = forward_solve(config, grid, path, theta=theta, region=region)
    adj = adjoint_solve(config, grid, path, tau, state, theta=theta, region=region)
    gg = objective.grad_gamma(config, grid, path, tau, state, adj, theta=theta)
    gt = objective.grad_tau(config, grid, path, tau, state, theta=theta, region=region)

    def cost(values, t):
        return objective.reduced_cost(config, grid, path.with_values(values), t, theta=theta, region=region)

    rows = []
    for _ in range(n_directions):
        d = rng.standard_normal(path.values.shape)
        d /= np.max(np.abs(d))
        fd = (cost(path.values + eps * d, tau) - cost(path.values - eps * d, tau)) / (2 * eps)
        ad = gg.action(d)
        rows.append({"kind": "gamma", "adjoint": ad, "fd": fd,
                     "rel_error": abs(ad - fd) / max(abs(ad), abs(fd), 1e-300)})
    lo, hi = config.tau_min, config.T_final
    up, down = _room(tau, config, grid, 1.0), _room(tau, config, grid, -1.0)
    up, down = min(up, hi - tau), min(down, tau - lo)
    u = _window_points(tau, config) / grid.dt
    on_node = bool(np.any(np.abs(u - np.round(u)) < 1e-7))
    if not on_node and min(up, down) > 1e-6 * grid.dt:
        h = min(eps, 0.5 * min(up, down))
        fd = (cost(path.values, tau + h) - cost(path.values, tau - h)) / (2 * h)
    else:
        # on a node or a bound: one-sided three-point rule, exact on the quadratic piece
        sgn = 1.0 if up >= down else -1.0
        h = min(eps, 0.25 * max(up, down))
        f0, f1, f2 = (cost(path.values, tau + sgn * k * h) for k in range(3))
        fd = sgn * (-3 * f0 + 4 * f1 - f2) / (2 * h)
    # the tau derivative is a sum of window terms that cancel at a stationary tau
    problem = get_problem(config, grid, region, theta)
    _, _, phiQ, phiO = objective._misfits(problem, state.values)
    dQ, dO, _, _ = objective._tau_functionals(config, grid, tau)
    scale = float(abs(np.dot(dQ, phiQ)) + abs(np.dot(dO, phiO)) + config.beta_T)
    rows.append({"kind": "tau", "adjoint": gt, "fd": fd, "step": h, "scale": scale,
                 "rel_error": float(abs(gt - fd) / max(abs(gt), abs(fd), scale, 1e-300))})
    worst = max(r["rel_error"] for r in rows)
    return {"rows": rows, "max_rel_error": worst, "rtol": rtol, "passed": bool(worst <= rtol),
            "verdict": "PASS" if worst <= rtol else "FAIL"}
