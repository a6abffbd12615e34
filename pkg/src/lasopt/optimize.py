"""Quadratic-penalty outer loop, inner quasi-Newton solver and multiplier recovery."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from lasopt import objective
from lasopt.model import LaserPath, LevelSetRegion, ModelConfig, SlabGrid, constraint_trace
from lasopt.pde import SolverError, adjoint_solve, forward_solve, get_problem
from lasopt.quadrature import trapezoid_weights

ARMIJO_C = 1e-4
MIN_STEP = 1e-14


@dataclass(frozen=True)
class PenaltySchedule:
    kappa0: float = 10.0
    growth: float = 10.0
    n_outer: int = 5
    tol0: float = 1e-4
    max_inner: int = 500

    def __post_init__(self):
        if not (math.isfinite(self.kappa0) and self.kappa0 > 0):
            raise ValueError("kappa0 must be positive")
        if not (self.growth >= 2):
            raise ValueError("growth must be >= 2")
        if self.n_outer < 1:
            raise ValueError("n_outer must be >= 1")
        if not (self.tol0 > 0):
            raise ValueError("tol0 must be positive")

    def kappas(self) -> np.ndarray:
        return self.kappa0 * self.growth ** np.arange(self.n_outer)

    def tolerances(self) -> np.ndarray:
        """Inner tolerances shrinking like 1/sqrt(kappa)."""
        return self.tol0 * np.sqrt(self.kappa0 / self.kappas())


@dataclass
class MultiplierEstimate:
    lam: np.ndarray
    mu: float
    active: np.ndarray
    eps_act: float
    kappa: float

    def to_dict(self) -> dict:
        return {"lambda": self.lam.tolist(), "mu": self.mu, "active": self.active.tolist(),
                "eps_act": self.eps_act, "kappa": self.kappa}


class PathMetric:
    """Discrete H1(0,T) inner product on each path component: lumped mass plus stiffness."""

    def __init__(self, nt: int, T: float):
        dt = T / nt
        w = trapezoid_weights(nt, T)
        diag = w + np.r_[1.0, np.full(nt - 1, 2.0), 1.0] / dt
        upper = np.r_[0.0, np.full(nt, -1.0 / dt)]
        self.banded = np.vstack([upper, diag])
        self.matrix = np.diag(diag) + np.diag(upper[1:], 1) + np.diag(upper[1:], -1)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def solve(self, g: np.ndarray) -> np.ndarray:
        return sla.solveh_banded(self.banded, g)

    def dual_norm(self, g: np.ndarray) -> float:
        return float(math.sqrt(max(np.sum(g * self.solve(g)), 0.0)))


@dataclass
class InnerResult:
    path: LaserPath
    tau: float
    converged: bool
    iterations: int
    grad_norm: float
    value: float
    status: str
    rows: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.path, self.tau))


class PenalizedObjective:
    """Reduced cost + kappa * penalty (+ optional proximal anchor terms)."""

    def __init__(self, config, grid, region, kappa, *, theta=1.0, anchor=None):
        self.config, self.grid, self.region, self.kappa, self.theta = config, grid, region, kappa, theta
        self.anchor = anchor
        self.w = grid.time_weights
        self.n_evals = 0

    def value(self, values: np.ndarray, tau: float) -> float:
        path = LaserPath(values, self.grid.T_final)
        self.n_evals += 1
        f = objective.reduced_cost(self.config, self.grid, path, tau, theta=self.theta, region=self.region)
        return f + self._extra(path, tau)[0]

    def _extra(self, path, tau):
        val, gg, gt = 0.0, np.zeros_like(path.values), 0.0
        if self.region is not None and self.kappa > 0:
            val += self.kappa * objective.penalty_value(path, self.region)
            gg += self.kappa * objective.penalty_gradient(path, self.region).vector()
        if self.anchor is not None:
            a_vals, a_tau = self.anchor
            diff = path.values - a_vals
            val += float(np.dot(self.w, np.sum(diff * diff, axis=1))) + (tau - a_tau) ** 2
            gg += 2.0 * self.w[:, None] * diff
            gt += 2.0 * (tau - a_tau)
        return val, gg, gt

    def value_and_grad(self, values: np.ndarray, tau: float):
        cfg, grid = self.config, self.grid
        path = LaserPath(values, grid.T_final)
        self.n_evals += 1
        state = forward_solve(cfg, grid, path, theta=self.theta, region=self.region)
        cost = objective.eval_cost(cfg, grid, state, path, tau, theta=self.theta, region=self.region).total
        adj = adjoint_solve(cfg, grid, path, tau, state, theta=self.theta, region=self.region)
        gg = objective.grad_gamma(cfg, grid, path, tau, state, adj, theta=self.theta).vector()
        gt = objective.grad_tau(cfg, grid, path, tau, state, theta=self.theta, region=self.region)
        extra, egg, egt = self._extra(path, tau)
        return cost + extra, gg + egg, gt + egt


def _penalty_blocks(values, region, kappa, w):
    """Gauss-Newton Hessian of kappa * penalty_value, one 2x2 block per node."""
    g = region.value(values)
    grad = region.grad(values)
    scale = 2.0 * kappa * w * (g > 0)
    return scale[:, None, None] * np.einsum("ij,ik->ijk", grad, grad)


def stationarity(metric: PathMetric, g_gamma: np.ndarray, g_tau: float, tau: float, lo: float, hi: float) -> float:
    """H1-dual norm of the path gradient combined with the projected tau gradient."""
    r_tau = tau - min(max(tau - g_tau, lo), hi)
    return math.sqrt(metric.dual_norm(g_gamma) ** 2 + r_tau**2)


def inner_solve(config: ModelConfig, grid: SlabGrid, start, kappa: float, tol: float, *,
                region: LevelSetRegion | None = None, theta: float = 1.0, max_iter: int = 500,
                memory: int = 10, anchor=None, outer_index: int = 0) -> InnerResult:
    """Minimize the penalized cost over (path, tau) to stationarity measure <= tol.

    Limited-memory quasi-Newton on the stacked variable (path, tau) with the
    H1 Gram matrix (and 1 for tau) as initial inverse Hessian. The tau
    component is projected onto [3r, T] along the backtracking search, and
    when tau sits on a bound with the gradient pushing outward it is frozen
    for that step so the path alone takes the quasi-Newton step.
    """
    if not (tol > 0):
        raise ValueError("tol must be positive")
    path0, tau0 = start
    path0.check_matches(grid)
    lo, hi = config.tau_min, config.T_final
    fun = PenalizedObjective(config, grid, region, kappa, theta=theta, anchor=anchor)
    metric = PathMetric(grid.nt, grid.T_final)
    h0 = InitialInverse(metric, grid.nt)
    x = np.array(path0.values, dtype=float)
    tau = float(min(max(tau0, lo), hi))
    f, g, gt = fun.value_and_grad(x, tau)
    if not (np.isfinite(f) and np.all(np.isfinite(g)) and np.isfinite(gt)):
        raise ValueError("non-finite start")
    S, Y = [], []
    rows = []
    status = "max_iter"
    gnorm = stationarity(metric, g, gt, tau, lo, hi)
    for it in range(max_iter + 1):
        gnorm = stationarity(metric, g, gt, tau, lo, hi)
        rows.append({"outer": outer_index, "inner": it, "kappa": kappa, "value": f,
                     "grad_norm": gnorm, "tau": tau})
        if gnorm <= tol:
            status = "converged"
            break
        if it == max_iter:
            break
        frozen = (tau <= lo and gt > 0) or (tau >= hi and gt < 0)
        h0.default_scale = max(1.0, gnorm)
        if region is not None and kappa > 0:
            h0.set_penalty(_penalty_blocks(x, region, kappa, fun.w))
        d, dtau = _two_loop(g, gt, S, Y, h0, frozen)
        slope = float(np.sum(g * d) + gt * dtau)
        if slope >= 0.0:
            S, Y = [], []
            d, dtau = _two_loop(g, gt, S, Y, h0, frozen)
            slope = float(np.sum(g * d) + gt * dtau)
        t = 1.0
        accepted = False
        while t * max(np.max(np.abs(d)), abs(dtau)) >= MIN_STEP:
            x_new = x + t * d
            tau_new = min(max(tau + t * dtau, lo), hi)
            decrease = float(np.sum(g * (x_new - x)) + gt * (tau_new - tau))
            f_new = fun.value(x_new, tau_new)
            if f_new <= f + ARMIJO_C * decrease:
                accepted = True
                break
            if abs(decrease) < 1e-13 * max(1.0, abs(f)):
                # predicted decrease is at rounding level; accept if stationarity improves
                _, g_try, gt_try = fun.value_and_grad(x_new, tau_new)
                if stationarity(metric, g_try, gt_try, tau_new, lo, hi) < gnorm:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            status = "stalled"
            break
        f_new, g_new, gt_new = fun.value_and_grad(x_new, tau_new)
        s = np.append((x_new - x).ravel(), tau_new - tau)
        y = np.append((g_new - g).ravel(), gt_new - gt)
        sy = float(np.dot(s, y))
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            S.append(s)
            Y.append(y)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
        x, tau, f, g, gt = x_new, tau_new, f_new, g_new, gt_new
    return InnerResult(LaserPath(x, grid.T_final), tau, status == "converged", len(rows) - 1,
                       gnorm, f, status, rows)


def _two_loop(g, gt, S, Y, h0, frozen: bool):
    """Inverse-Hessian action on the stacked gradient; a frozen tau is held fixed."""
    shape = g.shape
    n = g.size
    mask = np.ones(n + 1)
    if frozen:
        mask[-1] = 0.0
    q = np.append(g.ravel(), gt) * mask
    pairs = [(s * mask, y * mask) for s, y in zip(S, Y)]
    pairs = [(s, y) for s, y in pairs if np.dot(s, y) > 0]
    alphas = []
    for s, y in reversed(pairs):
        rho = 1.0 / np.dot(y, s)
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    r = h0(q, pairs[-1] if pairs else None) * mask
    for a, (s, y) in zip(reversed(alphas), pairs):
        b = np.dot(y, r) / np.dot(y, s)
        r += (a - b) * s
    r = -r
    return r[:n].reshape(shape), float(r[n])


class InitialInverse:
    """Scaled H1 metric plus the exact Gauss-Newton curvature of the penalty term.

    The path unknowns are interleaved (x_0, y_0, x_1, ...), which makes the
    combined matrix banded with two off-diagonals.
    """

    def __init__(self, metric: PathMetric, nt: int):
        self.metric = metric
        self.n = 2 * (nt + 1)
        self.gdiag = np.diag(metric.matrix).copy()
        self.goff = np.diag(metric.matrix, 1).copy()
        self.blocks = None
        self.default_scale = 1.0

    def set_penalty(self, blocks):
        self.blocks = blocks

    def _gram(self, v):
        return (self.metric.matrix @ v[:-1].reshape(-1, 2)).ravel()

    def __call__(self, q, pair):
        n = self.n
        if pair is None:
            sinv = self.default_scale
        else:
            s, y = pair
            yr = y.copy()
            if self.blocks is not None:
                yr[:n] -= np.einsum("ijk,ik->ij", self.blocks, s[:n].reshape(-1, 2)).ravel()
            curv = float(np.dot(s[:n], self._gram(s)) + s[n] ** 2)
            sinv = float(np.dot(s, yr)) / curv
            if not sinv > 0:
                sinv = float(np.dot(s, y)) / curv
        out = np.empty_like(q)
        out[n] = q[n] / sinv
        if self.blocks is None:
            out[:n] = self.metric.solve(q[:n].reshape(-1, 2)).ravel() / sinv
            return out
        ab = np.zeros((3, n))
        ab[2, 0::2] = sinv * self.gdiag + self.blocks[:, 0, 0]
        ab[2, 1::2] = sinv * self.gdiag + self.blocks[:, 1, 1]
        ab[1, 1::2] = self.blocks[:, 0, 1]
        ab[0, 2::2] = sinv * self.goff
        ab[0, 3::2] = sinv * self.goff
        out[:n] = sla.solveh_banded(ab, q[:n])
        return out


def recover_multiplier(path: LaserPath, tau: float, region: LevelSetRegion, kappa: float,
                       config: ModelConfig, grid: SlabGrid, state=None, *, eps_act: float | None = None,
                       theta: float = 1.0) -> MultiplierEstimate:
    """lambda_i = 2 kappa [g(gamma_i)]_+ and mu = -dJ/dtau."""
    g = constraint_trace(path, region)
    lam = 2.0 * kappa * np.maximum(g, 0.0)
    if eps_act is None:
        eps_act = 1e-6 * region.scale
    if state is None:
        state = forward_solve(config, grid, path, theta=theta, region=region)
    mu = -objective.grad_tau(config, grid, path, tau, state, theta=theta, region=region)
    return MultiplierEstimate(lam, mu, g >= -eps_act, float(eps_act), float(kappa))


@dataclass
class OuterRecord:
    kappa: float
    tol: float
    cost: float
    penalty: float
    kappa_penalty: float
    max_violation: float
    inner_iterations: int
    grad_norm: float
    tau: float
    converged: bool
    status: str
    lambda_l2: float
    bound_ok: bool


@dataclass
class OptimReport:
    path: LaserPath
    tau: float
    records: list[OuterRecord]
    multiplier: MultiplierEstimate | None
    inner_rows: list[dict]
    aborted: bool
    reference_cost: float
    config: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "path": self.path.values.tolist(),
            "aborted": self.aborted,
            "reference_cost": self.reference_cost,
            "records": [asdict(r) for r in self.records],
            "multiplier": None if self.multiplier is None else self.multiplier.to_dict(),
            "config": self.config,
            "schedule": self.schedule,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    def write_iterations_csv(self, path) -> None:
        keys = ["outer", "inner", "kappa", "value", "grad_norm", "tau"]
        with Path(path).open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            for row in self.inner_rows:
                writer.writerow({k: row[k] for k in keys})


def feasible_reference(config, grid, region, start, *, theta=1.0):
    """A feasible (path, tau): the start if feasible, otherwise a constant path at the region centre."""
    path, tau = start
    if np.all(constraint_trace(path, region) <= 0.0):
        return path, tau
    if region.center is None or region.value(region.center) > 0:
        raise ValueError("start is infeasible and the region has no interior centre")
    return LaserPath.constant(region.center, grid.nt, grid.T_final), tau


def penalty_loop(config: ModelConfig, grid: SlabGrid, schedule: PenaltySchedule, start, *,
                 region: LevelSetRegion, theta: float = 1.0, anchor=None, eps_act: float | None = None,
                 log=None) -> OptimReport:
    """Warm-started sequence of inner solves over the increasing penalty schedule."""
    path, tau = start
    path.check_matches(grid)
    tau = float(min(max(tau, config.tau_min), config.T_final))
    ref_path, ref_tau = feasible_reference(config, grid, region, (path, tau), theta=theta)
    ref_cost = objective.reduced_cost(config, grid, ref_path, ref_tau, theta=theta, region=region)
    records, rows, history = [], [], []
    failures = 0
    aborted = False
    multiplier = None
    w = grid.time_weights
    for k, (kappa, tol) in enumerate(zip(schedule.kappas(), schedule.tolerances())):
        try:
            res = inner_solve(config, grid, (path, tau), float(kappa), float(tol), region=region, theta=theta,
                              max_iter=schedule.max_inner, anchor=anchor, outer_index=k)
        except SolverError as exc:
            res = None
            status = f"solver_error: {exc}"
        if res is None:
            failures += 1
            records.append(OuterRecord(float(kappa), float(tol), math.nan, math.nan, math.nan, math.nan, 0,
                                       math.nan, tau, False, status, math.nan, False))
        else:
            path, tau = res.path, res.tau
            rows.extend(res.rows)
            state = forward_solve(config, grid, path, theta=theta, region=region)
            cost = objective.eval_cost(config, grid, state, path, tau, theta=theta, region=region).total
            pen = objective.penalty_value(path, region)
            viol = float(np.max(np.maximum(constraint_trace(path, region), 0.0)))
            multiplier = recover_multiplier(path, tau, region, float(kappa), config, grid, state,
                                            eps_act=eps_act, theta=theta)
            lam_l2 = float(math.sqrt(np.dot(w, multiplier.lam**2)))
            records.append(OuterRecord(float(kappa), float(tol), cost, pen, float(kappa) * pen, viol,
                                       res.iterations, res.grad_norm, tau, res.converged, res.status, lam_l2,
                                       bool(kappa * pen <= ref_cost * (1 + 1e-9) + 1e-14)))
            history.append((path, tau, multiplier))
            failures = 0 if res.converged else failures + 1
        if log is not None:
            log(records[-1])
        if failures >= 2:
            aborted = True
            break
    return OptimReport(path, tau, records, multiplier, rows, aborted, ref_cost, config.to_dict(),
                       asdict(schedule), history)
