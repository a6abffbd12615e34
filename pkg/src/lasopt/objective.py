"""Cost functional, exact discrete derivatives and the penalty term.

All derivatives are those of the discrete reduced cost: the state comes from
the theta scheme, tracking windows integrate the piecewise-linear interpolant
of the per-step misfit, and the path term is the exact seminorm of the
piecewise-linear path.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from lasopt import laser
from lasopt.model import LaserPath, LevelSetRegion, ModelConfig, ShapeError, SlabGrid, h1_seminorm_sq
from lasopt.pde import (
    SpaceTimeField,
    cost_state_gradient,
    forward_solve,
    get_problem,
    tracking_windows,
)
from lasopt.quadrature import interp_weights, slope_weights, trapezoid_weights


@dataclass(frozen=True)
class CostBreakdown:
    tracking_Q: float
    tracking_Omega: float
    gradient_energy: float
    path_seminorm_term: float
    time_term: float

    @property
    def total(self) -> float:
        return (self.tracking_Q + self.tracking_Omega + self.gradient_energy
                + self.path_seminorm_term + self.time_term)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["total"] = self.total
        return out


@dataclass
class PathGradient:
    """Dual action d -> sum_i weights_i kernel_i . d_i + lambda_gamma sum_k dgamma_k . dd_k / dt."""

    kernel: np.ndarray
    weights: np.ndarray
    lambda_gamma: float
    path_values: np.ndarray
    dt: float

    @property
    def velocity(self) -> np.ndarray:
        """lambda_gamma * gamma' on each interval."""
        return self.lambda_gamma * np.diff(self.path_values, axis=0) / self.dt

    def action(self, dpath) -> float:
        d = np.asarray(dpath.values if isinstance(dpath, LaserPath) else dpath, dtype=float)
        if d.shape != self.kernel.shape:
            raise ShapeError(f"direction shape {d.shape} does not match {self.kernel.shape}")
        value = np.sum(self.weights[:, None] * self.kernel * d)
        value += np.sum(self.velocity * np.diff(d, axis=0))
        return float(value)

    def vector(self) -> np.ndarray:
        """Euclidean gradient, shape (nt+1, 2), so that action(d) = sum(vector * d)."""
        g = self.weights[:, None] * self.kernel
        vel = self.velocity
        g[:-1] -= vel
        g[1:] += vel
        return g


def _misfits(problem, Y: np.ndarray):
    W = problem.grid.volume_weights
    eQ = Y - problem.y_Q
    eO = Y - problem.y_Omega
    return eQ, eO, np.einsum("tn,n,tn->t", eQ, W, eQ), np.einsum("tn,n,tn->t", eO, W, eO)


def eval_cost(config: ModelConfig, grid: SlabGrid, state: SpaceTimeField, path: LaserPath, tau: float,
              *, theta: float = 1.0, region=None) -> CostBreakdown:
    problem = get_problem(config, grid, region, theta)
    problem.check_tau(tau)
    path.check_matches(grid)
    Y = state.values
    cQ, cO = tracking_windows(config, grid, tau)
    _, _, phiQ, phiO = _misfits(problem, Y)
    KY = (grid.stiffness @ Y.T).T
    energy = 0.5 * float(np.dot(grid.time_weights, np.einsum("tn,tn->t", Y, KY)))
    return CostBreakdown(
        tracking_Q=float(np.dot(cQ, phiQ)),
        tracking_Omega=float(np.dot(cO, phiO)),
        gradient_energy=energy,
        path_seminorm_term=0.5 * config.lambda_gamma * h1_seminorm_sq(path),
        time_term=config.beta_T * float(tau),
    )


def reduced_cost(config: ModelConfig, grid: SlabGrid, path: LaserPath, tau: float, *,
                 theta: float = 1.0, region=None) -> float:
    get_problem(config, grid, region, theta).check_tau(tau)
    state = forward_solve(config, grid, path, theta=theta, region=region)
    return eval_cost(config, grid, state, path, tau, theta=theta, region=region).total


def cost_derivative_along(config: ModelConfig, grid: SlabGrid, state: SpaceTimeField, tau: float,
                          dstate: SpaceTimeField, *, theta: float = 1.0, region=None) -> float:
    """Derivative of the state-dependent cost terms along a state perturbation."""
    problem = get_problem(config, grid, region, theta)
    G = cost_state_gradient(problem, state.values, tau)
    return float(np.sum(G * dstate.values))


def adjoint_kernel(config: ModelConfig, grid: SlabGrid, path: LaserPath, adjoint_values: np.ndarray,
                   theta: float = 1.0) -> np.ndarray:
    """Kernel P_i = sum over top nodes of w c_R e^w (x - gamma_i) p_i, shape (nt+1, 2)."""
    op = get_problem(config, grid, None, theta).operator
    p = op.effective_top(adjoint_values)
    xt = grid.top_xy[None, :, :] - path.values[:, None, :]
    ew = np.exp(-2.0 * np.sum(xt * xt, axis=-1) / config.beam_radius**2)
    return config.c_R * np.einsum("tn,n,tnk->tk", ew * p, grid.top_weights, xt)


def grad_gamma(config: ModelConfig, grid: SlabGrid, path: LaserPath, tau: float, state: SpaceTimeField,
               adjoint: SpaceTimeField, *, theta: float = 1.0, region=None) -> PathGradient:
    """Derivative of the reduced cost in the path.

    The boundary load of step i is weighted by dt in the theta scheme, so the
    kernel nodes carry uniform weight dt.
    """
    path.check_matches(grid)
    if adjoint.values.shape != state.values.shape:
        raise ShapeError("state and adjoint shapes differ")
    kernel = adjoint_kernel(config, grid, path, adjoint.values, theta)
    return PathGradient(kernel, np.full(grid.nt + 1, grid.dt), config.lambda_gamma,
                        np.array(path.values), grid.dt)


def _tau_functionals(config: ModelConfig, grid: SlabGrid, tau: float):
    """Linear functionals on the per-step misfits giving d/dtau and d2/dtau2 of the tracking terms."""
    r, nt, T = config.r_window, grid.nt, grid.T_final
    a, b = 0.5 * (tau - r), 0.5 * (tau + r)
    dQ = (config.lambda_Q / (4 * r)) * (interp_weights(b, nt, T) - interp_weights(a, nt, T))
    dO = (config.lambda_Omega / (2 * r)) * (interp_weights(tau, nt, T) - interp_weights(tau - r, nt, T))
    sQ = (config.lambda_Q / (8 * r)) * (slope_weights(b, nt, T) - slope_weights(a, nt, T))
    sO = (config.lambda_Omega / (2 * r)) * (slope_weights(tau, nt, T) - slope_weights(tau - r, nt, T))
    return dQ, dO, sQ, sO


def grad_tau(config: ModelConfig, grid: SlabGrid, path: LaserPath, tau: float, state: SpaceTimeField,
             *, theta: float = 1.0, region=None) -> float:
    """Derivative of the reduced cost in the treatment time."""
    problem = get_problem(config, grid, region, theta)
    problem.check_tau(tau)
    _, _, phiQ, phiO = _misfits(problem, state.values)
    dQ, dO, _, _ = _tau_functionals(config, grid, tau)
    return float(np.dot(dQ, phiQ) + np.dot(dO, phiO) + config.beta_T)


def penalty_value(path: LaserPath, region: LevelSetRegion) -> float:
    """Trapezoidal value of the integral of [g(gamma(t))]_+^2."""
    g = np.maximum(region.value(path.values), 0.0)
    return float(np.dot(trapezoid_weights(path.nt, path.T_final), g * g))


def penalty_gradient(path: LaserPath, region: LevelSetRegion) -> PathGradient:
    g = np.maximum(region.value(path.values), 0.0)
    kernel = 2.0 * g[:, None] * region.grad(path.values)
    return PathGradient(kernel, trapezoid_weights(path.nt, path.T_final), 0.0,
                        np.array(path.values), path.dt)


def _multiplier_values(multiplier, n: int) -> np.ndarray:
    if multiplier is None:
        return np.zeros(n)
    lam = np.asarray(getattr(multiplier, "lam", multiplier), dtype=float)
    if lam.shape != (n,):
        raise ShapeError(f"multiplier has shape {lam.shape}, expected ({n},)")
    return lam


def lagrangian_value(config: ModelConfig, grid: SlabGrid, path: LaserPath, tau: float, multiplier,
                     region: LevelSetRegion, *, theta: float = 1.0) -> float:
    """Reduced cost plus the trapezoid pairing of the multiplier with g o gamma."""
    lam = _multiplier_values(multiplier, grid.nt + 1)
    value = reduced_cost(config, grid, path, tau, theta=theta, region=region)
    return value + float(np.dot(grid.time_weights * lam, region.value(path.values)))


def _split(direction, shape):
    if isinstance(direction, tuple):
        dpath, dtau = direction
    else:
        dpath, dtau = direction, 0.0
    d = np.asarray(dpath.values if isinstance(dpath, LaserPath) else dpath, dtype=float)
    if d.shape != shape:
        raise ShapeError(f"direction shape {d.shape} does not match path shape {shape}")
    return d, float(dtau)


class LagrangianHessian:
    """Second derivative of the Lagrangian at a fixed (path, tau, multiplier).

    ``form`` evaluates the bilinear form from two linearized solves;
    ``matvec`` returns the Euclidean representation of form(d, .) from one
    linearized and one adjoint solve.
    """

    def __init__(self, config: ModelConfig, grid: SlabGrid, path: LaserPath, tau: float, multiplier,
                 region: LevelSetRegion | None = None, *, theta: float = 1.0):
        self.problem = get_problem(config, grid, region, theta)
        self.problem.check_tau(tau)
        path.check_matches(grid)
        self.config, self.grid, self.path, self.tau, self.region = config, grid, path, float(tau), region
        self.theta = theta
        self.op = self.problem.operator
        self.lam = _multiplier_values(multiplier, grid.nt + 1)
        if region is None and np.any(self.lam != 0.0):
            raise ValueError("a nonzero multiplier needs the scan region")
        self.state = forward_solve(config, grid, path, theta=theta, region=region)
        self.adjoint_values = self.op.adjoint_march(cost_state_gradient(self.problem, self.state.values, tau))
        self.p_top = self.op.effective_top(self.adjoint_values)
        self.xt = grid.top_xy[None, :, :] - path.values[:, None, :]
        self.ew = np.exp(-2.0 * np.sum(self.xt * self.xt, axis=-1) / config.beam_radius**2)
        eQ, eO, phiQ, phiO = _misfits(self.problem, self.state.values)
        W = grid.volume_weights
        self.WeQ, self.WeO = W * eQ, W * eO
        dQ, dO, sQ, sO = _tau_functionals(config, grid, tau)
        self.dQ, self.dO = dQ, dO
        self.d_tautau = float(np.dot(sQ, phiQ) + np.dot(sO, phiO))
        cQ, cO = tracking_windows(config, grid, tau)
        self.c_track = 2.0 * (cQ + cO)
        self.tw = grid.time_weights
        self.hess_g = region.hess(path.values) if region is not None else np.zeros((grid.nt + 1, 2, 2))
        self.n_solves = 2

    @property
    def shape(self):
        return self.path.values.shape

    def _linearized(self, d: np.ndarray) -> np.ndarray:
        self.n_solves += 1
        src = laser.linearized_source(self.config, self.grid, self.path, d)
        return self.op.march(np.zeros(self.grid.n_nodes), src, include_bottom=False)

    def _mixed(self, V: np.ndarray) -> float:
        """d/dgamma of the tau-derivative along the sensitivity V."""
        psiQ = np.einsum("tn,tn->t", self.WeQ, V)
        psiO = np.einsum("tn,tn->t", self.WeO, V)
        return 2.0 * float(np.dot(self.dQ, psiQ) + np.dot(self.dO, psiO))

    def _state_form(self, V1: np.ndarray, V2: np.ndarray) -> float:
        K, W = self.grid.stiffness, self.grid.volume_weights
        KV2 = (K @ V2.T).T
        value = np.dot(self.tw, np.einsum("tn,tn->t", V1, KV2))
        value += np.dot(self.c_track, np.einsum("tn,n,tn->t", V1, W, V2))
        return float(value)

    def _curvature_forms(self, d1: np.ndarray, d2: np.ndarray) -> float:
        """Terms with no state sensitivity: D2S adjoint pairing, seminorm, multiplier."""
        src2 = self.config.c_R * laser.second_source(self.config, self.grid, self.path, d1, d2)
        value = self.op.boundary_pairing(self.adjoint_values, src2)
        value += self.config.lambda_gamma * np.sum(np.diff(d1, axis=0) * np.diff(d2, axis=0)) / self.grid.dt
        value += np.sum(self.tw * self.lam * np.einsum("ij,ijk,ik->i", d1, self.hess_g, d2))
        return float(value)

    def form(self, direction1, direction2) -> float:
        d1, t1 = _split(direction1, self.shape)
        d2, t2 = _split(direction2, self.shape)
        V1 = self._linearized(d1)
        V2 = V1 if (d1 is d2 or np.array_equal(d1, d2)) else self._linearized(d2)
        value = self._state_form(V1, V2) + self._curvature_forms(d1, d2)
        value += t2 * self._mixed(V1) + t1 * self._mixed(V2) + t1 * t2 * self.d_tautau
        return float(value)

    def multiplier_term(self, direction1, direction2) -> float:
        d1, _ = _split(direction1, self.shape)
        d2, _ = _split(direction2, self.shape)
        return float(np.sum(self.tw * self.lam * np.einsum("ij,ijk,ik->i", d1, self.hess_g, d2)))

    def matvec(self, direction) -> tuple[np.ndarray, float]:
        d, t = _split(direction, self.shape)
        cfg, grid = self.config, self.grid
        V = self._linearized(d)
        K, W = grid.stiffness, grid.volume_weights
        loads = self.tw[:, None] * (K @ V.T).T + self.c_track[:, None] * W * V
        loads += t * 2.0 * (self.dQ[:, None] * self.WeQ + self.dO[:, None] * self.WeO)
        Z = self.op.adjoint_march(loads)
        self.n_solves += 1
        z_top = self.op.effective_top(Z)
        dt, wt, R2 = grid.dt, grid.top_weights, cfg.beam_radius**2
        out = dt * cfg.c_R * np.einsum("tn,n,tnk->tk", self.ew * z_top, wt, self.xt)
        proj = np.einsum("tnk,tk->tn", self.xt, d)
        curv = (4.0 / R2) * proj[:, :, None] * self.xt - d[:, None, :]
        out += dt * cfg.c_R * np.einsum("tn,n,tnk->tk", self.ew * self.p_top, wt, curv)
        vel = cfg.lambda_gamma * np.diff(d, axis=0) / dt
        out[:-1] -= vel
        out[1:] += vel
        out += (self.tw * self.lam)[:, None] * np.einsum("ijk,ik->ij", self.hess_g, d)
        return out, self._mixed(V) + t * self.d_tautau


def lagrangian_hessian_form(config: ModelConfig, grid: SlabGrid, path: LaserPath, tau: float, multiplier,
                            d1, d2, *, region: LevelSetRegion | None = None, theta: float = 1.0) -> float:
    """Bilinear form of the Lagrangian Hessian; directions are (dpath, dtau) tuples or bare paths."""
    return LagrangianHessian(config, grid, path, tau, multiplier, region, theta=theta).form(d1, d2)
