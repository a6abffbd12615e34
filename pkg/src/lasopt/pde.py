"""Theta-scheme solvers for the heat equation, its path sensitivities and the adjoint.

Space is discretized with tensor-product P1 stiffness and lumped
(trapezoidal) mass and face weights. One step reads

    (M + theta dt A) y^{n+1} = (M - (1-theta) dt A) y^n + dt (theta f^{n+1} + (1-theta) f^n)

with M = rho c diag(w_vol), A = kappa K + h_conv diag(w_faces) and f the
face-weighted boundary data. The adjoint is the exact transpose of this
recursion, stored as one multiplier q^n per step with q^{nt} = 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from lasopt import laser
from lasopt.model import BOTTOM, SIDE, TOP, LaserPath, ModelConfig, SlabGrid
from lasopt.problem import Problem, get_problem
from lasopt.quadrature import window_weights

DENSE_LIMIT = 2000
CG_RTOL = 1e-12


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass
class SpaceTimeField:
    """Nodal values for time steps 0..nt, shape (nt+1, n_nodes)."""

    values: np.ndarray
    grid: SlabGrid

    def __post_init__(self):
        expected = (self.grid.nt + 1, self.grid.n_nodes)
        if self.values.shape != expected:
            raise ValueError(f"field shape {self.values.shape} does not match grid {expected}")

    def top(self) -> np.ndarray:
        return self.values[:, self.grid.top_nodes]

    def l2_norms(self) -> np.ndarray:
        """Spatial L2 norm of each time slice."""
        return np.sqrt(np.einsum("tn,n,tn->t", self.values, self.grid.volume_weights, self.values))

    def space_time_l2(self) -> float:
        return float(np.sqrt(np.dot(self.grid.time_weights, self.l2_norms() ** 2)))

    def write_snapshots(self, directory, prefix: str = "temperature") -> list[Path]:
        """One CSV per time step with columns x,y,z,value."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        width = len(str(self.grid.nt))
        paths = []
        for i, row in enumerate(self.values):
            path = directory / f"{prefix}_{i:0{width}d}.csv"
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["x", "y", "z", "value"])
                for (x, y, z), v in zip(self.grid.coords, row):
                    writer.writerow([repr(float(x)), repr(float(y)), repr(float(z)), repr(float(v))])
            paths.append(path)
        return paths


class DiscreteHeatOperator:
    """Assembled step matrices and a reusable linear solver for one time step."""

    def __init__(self, config: ModelConfig, grid: SlabGrid, theta: float = 1.0):
        self.config, self.grid, self.theta = config, grid, float(theta)
        self.dt = grid.dt
        fw = grid.face_weights
        self.mass = config.rho * config.c_heat * grid.volume_weights
        self.robin = config.h_conv * (fw[TOP] + fw[SIDE] + fw[BOTTOM])
        self.A = sp.csr_matrix(config.kappa * grid.stiffness + sp.diags(self.robin))
        M = sp.diags(self.mass)
        self.L = sp.csr_matrix(M + self.theta * self.dt * self.A)
        self.R = sp.csr_matrix(M - (1.0 - self.theta) * self.dt * self.A)
        self.bottom_load = config.h_conv * config.yB_bottom * fw[BOTTOM]
        self.dense = grid.n_nodes < DENSE_LIMIT
        if self.dense:
            # explicit inverse: the step matrix and batched load solves become dense products
            chol = sla.cho_factor(self.L.toarray(), lower=True)
            Linv = sla.cho_solve(chol, np.eye(grid.n_nodes))
            self._Linv = 0.5 * (Linv + Linv.T)
            self._step = self._Linv @ self.R.toarray()
        else:
            self._jacobi = sp.diags(1.0 / self.L.diagonal())

    def solve(self, rhs: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        if self.dense:
            return self._Linv @ rhs
        norm = np.linalg.norm(rhs)
        if norm == 0.0:
            return np.zeros_like(rhs)
        x, info = spla.cg(self.L, rhs, x0=x0, rtol=CG_RTOL, atol=0.0,
                          maxiter=20 * self.L.shape[0], M=self._jacobi)
        residual = np.linalg.norm(rhs - self.L @ x) / norm
        if info != 0 or not np.isfinite(residual):
            raise SolverError("conjugate gradient did not converge", residual, abs(int(info)))
        return x

    def top_load(self, top_values: np.ndarray) -> np.ndarray:
        """Face-weighted injection of a top-face trace into a full nodal vector."""
        out = np.zeros(self.grid.n_nodes)
        out[self.grid.top_nodes] = self.grid.top_weights * top_values
        return out

    def march(self, y0: np.ndarray, top_trace: np.ndarray, include_bottom: bool) -> np.ndarray:
        """Run the forward recursion; top_trace has shape (nt+1, n_top)."""
        nt, dt, th = self.grid.nt, self.dt, self.theta
        Y = np.empty((nt + 1, self.grid.n_nodes))
        Y[0] = y0
        if self.dense:
            F = np.zeros((nt + 1, self.grid.n_nodes))
            F[:, self.grid.top_nodes] = top_trace * self.grid.top_weights
            if include_bottom:
                F += self.bottom_load
            loads = dt * (th * F[1:] + (1.0 - th) * F[:-1])
            U = loads @ self._Linv
            for n in range(nt):
                Y[n + 1] = self._step @ Y[n] + U[n]
            if not np.all(np.isfinite(Y)):
                raise SolverError("non-finite values in forward solution")
            return Y
        f_prev = self.top_load(top_trace[0])
        if include_bottom:
            f_prev += self.bottom_load
        for n in range(nt):
            f_next = self.top_load(top_trace[n + 1])
            if include_bottom:
                f_next += self.bottom_load
            rhs = self.R @ Y[n] + dt * (th * f_next + (1.0 - th) * f_prev)
            Y[n + 1] = self.solve(rhs, x0=Y[n])
            f_prev = f_next
        if not np.all(np.isfinite(Y)):
            raise SolverError("non-finite values in forward solution")
        return Y

    def adjoint_march(self, loads: np.ndarray) -> np.ndarray:
        """Transposed recursion L q^n = R q^{n+1} + loads[n+1], q^{nt} = 0."""
        nt = self.grid.nt
        Q = np.zeros((nt + 1, self.grid.n_nodes))
        if self.dense:
            Z = loads[1:] @ self._Linv
            for n in range(nt - 1, -1, -1):
                Q[n] = self._step @ Q[n + 1] + Z[n]
            if not np.all(np.isfinite(Q)):
                raise SolverError("non-finite values in adjoint solution")
            return Q
        for n in range(nt - 1, -1, -1):
            Q[n] = self.solve(self.R @ Q[n + 1] + loads[n + 1], x0=Q[n + 1])
        if not np.all(np.isfinite(Q)):
            raise SolverError("non-finite values in adjoint solution")
        return Q

    def effective_top(self, Q: np.ndarray) -> np.ndarray:
        """Top trace of theta q^{i-1} + (1-theta) q^i, the multiplier paired with f^i."""
        top = Q[:, self.grid.top_nodes]
        out = (1.0 - self.theta) * top
        out[1:] += self.theta * top[:-1]
        return out

    def boundary_pairing(self, Q: np.ndarray, top_trace: np.ndarray) -> float:
        """Derivative of the cost along a top-face datum perturbation top_trace."""
        return float(self.dt * np.sum(self.effective_top(Q) * top_trace * self.grid.top_weights))


@lru_cache(maxsize=16)
def heat_operator(config: ModelConfig, grid: SlabGrid, theta: float = 1.0) -> DiscreteHeatOperator:
    """Factorized step operator shared by all solves on the same configuration."""
    return DiscreteHeatOperator(config, grid, theta)


def _resolve(config, grid, region, theta) -> Problem:
    return get_problem(config, grid, region, theta)


def forward_solve(config: ModelConfig, grid: SlabGrid, path: LaserPath, *, theta: float = 1.0,
                  region=None) -> SpaceTimeField:
    """Temperature field driven by the beam along ``path``."""
    op = _resolve(config, grid, region, theta).operator
    src = laser.source_field(config, grid, path)
    y0 = np.full(grid.n_nodes, float(config.y0_init))
    return SpaceTimeField(op.march(y0, src, include_bottom=True), grid)


def linearized_solve(config: ModelConfig, grid: SlabGrid, path: LaserPath, dpath, *,
                     theta: float = 1.0, region=None) -> SpaceTimeField:
    """Directional derivative of the path-to-state map along dpath."""
    op = _resolve(config, grid, region, theta).operator
    src = laser.linearized_source(config, grid, path, dpath)
    return SpaceTimeField(op.march(np.zeros(grid.n_nodes), src, include_bottom=False), grid)


def second_state_solve(config: ModelConfig, grid: SlabGrid, path: LaserPath, dpath1, dpath2, *,
                       theta: float = 1.0, region=None) -> SpaceTimeField:
    """Second directional derivative of the path-to-state map."""
    op = _resolve(config, grid, region, theta).operator
    src = config.c_R * laser.second_source(config, grid, path, dpath1, dpath2)
    return SpaceTimeField(op.march(np.zeros(grid.n_nodes), src, include_bottom=False), grid)


def tracking_windows(config: ModelConfig, grid: SlabGrid, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Time weights of the two tracking windows, already scaled by lambda/(2r)."""
    r, T, nt = config.r_window, grid.T_final, grid.nt
    cQ = window_weights(0.5 * (tau - r), 0.5 * (tau + r), nt, T)
    cO = window_weights(tau - r, tau, nt, T)
    return (config.lambda_Q / (2 * r)) * cQ, (config.lambda_Omega / (2 * r)) * cO


def cost_state_gradient(problem: Problem, state: np.ndarray, tau: float) -> np.ndarray:
    """Partial derivative of the discrete cost with respect to every state slice."""
    grid, W = problem.grid, problem.grid.volume_weights
    cQ, cO = tracking_windows(problem.config, grid, tau)
    K = grid.stiffness
    G = grid.time_weights[:, None] * (K @ state.T).T
    G += 2.0 * cQ[:, None] * W * (state - problem.y_Q)
    G += 2.0 * cO[:, None] * W * (state - problem.y_Omega)
    return G


def adjoint_solve(config: ModelConfig, grid: SlabGrid, path: LaserPath, tau: float,
                  state: SpaceTimeField, *, theta: float = 1.0, region=None) -> SpaceTimeField:
    """Discrete adjoint: transpose of the theta scheme with zero terminal value.

    The returned slice n is the multiplier of step n -> n+1; slice nt is zero.
    """
    problem = _resolve(config, grid, region, theta)
    problem.check_tau(tau)
    path.check_matches(grid)
    loads = cost_state_gradient(problem, state.values, tau)
    return SpaceTimeField(problem.operator.adjoint_march(loads), grid)
