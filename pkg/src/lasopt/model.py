"""Configuration, slab grid, laser path and scan-region level sets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

TOP, SIDE, BOTTOM = 1, 2, 3


class ConfigError(ValueError):
    """Invalid configuration value; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class TargetSpec:
    """Target temperature descriptor.

    ``kind="constant"`` gives ``value`` everywhere. ``kind="melt_column"``
    gives ``value`` below the scan region {g <= 0} and ``ambient`` elsewhere;
    ``column=(cx, cy, radius)`` replaces the scan region by a disk column.
    """

    kind: str = "constant"
    value: float = 0.0
    ambient: float = 0.0
    column: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "melt_column"):
            raise ConfigError("target.kind", f"unknown target kind {self.kind!r}")
        for name in ("value", "ambient"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"target.{name}", "must be finite")
        if self.column is not None:
            col = tuple(float(v) for v in self.column)
            if len(col) != 3 or not all(math.isfinite(v) for v in col) or col[2] <= 0:
                raise ConfigError("target.column", "must be (cx, cy, radius) with radius > 0")
            object.__setattr__(self, "column", col)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "value": self.value, "ambient": self.ambient}
        if self.column is not None:
            out["column"] = list(self.column)
        return out

    def evaluate(self, grid: "SlabGrid", region: "LevelSetRegion") -> np.ndarray:
        if self.kind == "constant":
            return np.full(grid.n_nodes, float(self.value))
        xy = grid.coords[:, :2]
        if self.column is not None:
            cx, cy, rad = self.column
            inside = (xy[:, 0] - cx) ** 2 + (xy[:, 1] - cy) ** 2 <= rad**2
            return np.where(inside, float(self.value), float(self.ambient))
        if region is None:
            raise ConfigError("region", "melt_column targets need a scan region")
        inside = region.value(xy) <= 0.0
        return np.where(inside, float(self.value), float(self.ambient))


@dataclass(frozen=True)
class ModelConfig:
    """Physical, cost and boundary-data constants (SI units)."""

    rho: float = 1.0
    c_heat: float = 1.0
    kappa: float = 0.1
    h_conv: float = 1.0
    alpha_abs: float = 1.0
    laser_power: float = 1.0
    beam_radius: float = 0.25
    T_final: float = 1.0
    r_window: float = 0.2
    lambda_Q: float = 1.0
    lambda_Omega: float = 1.0
    lambda_gamma: float = 0.05
    beta_T: float = 0.0
    y0_init: float = 0.0
    yB_bottom: float = 0.0
    yQ_target: TargetSpec = field(default_factory=TargetSpec)
    yOmega_target: TargetSpec = field(default_factory=TargetSpec)

    def __post_init__(self):
        for name in ("rho", "c_heat", "kappa", "h_conv", "beam_radius", "T_final"):
            _require_positive(name, getattr(self, name))
        if not (0.0 < self.alpha_abs <= 1.0):
            raise ConfigError("alpha_abs", "must lie in (0, 1]")
        # P = 0 is admitted for the degenerate no-source test configurations.
        if not (math.isfinite(self.laser_power) and self.laser_power >= 0.0):
            raise ConfigError("laser_power", "must be finite and >= 0")
        if not (0.0 < self.r_window < self.T_final / 3.0):
            raise ConfigError("r_window", "must satisfy 0 < r_window < T_final/3")
        for name in ("lambda_Q", "lambda_Omega"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise ConfigError(name, "must be finite and >= 0")
        _require_positive("lambda_gamma", self.lambda_gamma)
        if not (math.isfinite(self.beta_T) and self.beta_T >= 0.0):
            raise ConfigError("beta_T", "must be finite and >= 0")
        for name in ("y0_init", "yB_bottom"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(name, "must be finite")

    @property
    def c_R(self) -> float:
        """Prefactor 8 alpha P / (pi R^4) of the source derivatives."""
        return 8.0 * self.alpha_abs * self.laser_power / (math.pi * self.beam_radius**4)

    @property
    def peak_flux(self) -> float:
        return 2.0 * self.alpha_abs * self.laser_power / (math.pi * self.beam_radius**2)

    @property
    def tau_min(self) -> float:
        return 3.0 * self.r_window

    def replace(self, **changes) -> "ModelConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ModelConfig(**values)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, TargetSpec):
                value = value.to_dict()
            out[f.name] = value
        return out


def _require_positive(name, value):
    if not (math.isfinite(value) and value > 0.0):
        raise ConfigError(name, "must be finite and > 0")


def _trapezoid_1d(n: int, length: float) -> np.ndarray:
    h = length / (n - 1)
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def _stiffness_1d(n: int, length: float) -> sp.csr_matrix:
    h = length / (n - 1)
    main = np.full(n, 2.0 / h)
    main[0] = main[-1] = 1.0 / h
    off = np.full(n - 1, -1.0 / h)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


@dataclass(frozen=True)
class SlabGrid:
    """Tensor-product node grid on [0,Lx]x[0,Ly]x[-thickness,0] with nt time steps.

    Nodes are flattened in C order over (ix, iy, iz); the top face is iz = nz-1.
    """

    Lx: float = 1.0
    Ly: float = 1.0
    thickness: float = 0.25
    nx: int = 9
    ny: int = 9
    nz: int = 5
    nt: int = 100
    T_final: float = 1.0

    def __post_init__(self):
        for name in ("Lx", "Ly", "thickness", "T_final"):
            _require_positive(f"grid.{name}", getattr(self, name))
        if self.nx < 3 or self.ny < 3:
            raise ConfigError("grid.nx", "nx and ny must be >= 3")
        if self.nz < 2:
            raise ConfigError("grid.nz", "nz must be >= 2")
        if self.nt < 2:
            raise ConfigError("grid.nt", "nt must be >= 2")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def dt(self) -> float:
        return self.T_final / self.nt

    @property
    def dx(self) -> float:
        return self.Lx / (self.nx - 1)

    @property
    def dy(self) -> float:
        return self.Ly / (self.ny - 1)

    @cached_property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T_final, self.nt + 1)

    @cached_property
    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            np.linspace(0.0, self.Lx, self.nx),
            np.linspace(0.0, self.Ly, self.ny),
            np.linspace(-self.thickness, 0.0, self.nz),
        )

    @cached_property
    def coords(self) -> np.ndarray:
        x, y, z = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([x.ravel(), y.ravel(), z.ravel()])

    @cached_property
    def _index(self) -> np.ndarray:
        return np.arange(self.n_nodes).reshape(self.shape)

    @cached_property
    def tags(self) -> np.ndarray:
        """Boundary tag per node: TOP, SIDE, BOTTOM or 0 for interior nodes."""
        tags = np.zeros(self.shape, dtype=np.int8)
        tags[0, :, :] = tags[-1, :, :] = SIDE
        tags[:, 0, :] = tags[:, -1, :] = SIDE
        tags[:, :, 0] = BOTTOM
        tags[:, :, -1] = TOP
        return tags.ravel()

    @cached_property
    def top_nodes(self) -> np.ndarray:
        return self._index[:, :, -1].ravel()

    @cached_property
    def top_xy(self) -> np.ndarray:
        return self.coords[self.top_nodes, :2]

    @cached_property
    def _weights_1d(self):
        return (
            _trapezoid_1d(self.nx, self.Lx),
            _trapezoid_1d(self.ny, self.Ly),
            _trapezoid_1d(self.nz, self.thickness),
        )

    @cached_property
    def volume_weights(self) -> np.ndarray:
        wx, wy, wz = self._weights_1d
        return np.einsum("i,j,k->ijk", wx, wy, wz).ravel()

    @cached_property
    def face_weights(self) -> dict[int, np.ndarray]:
        """Trapezoidal weights per face family, as full-length nodal arrays.

        Edge nodes shared by two faces receive a contribution from each.
        """
        wx, wy, wz = self._weights_1d
        top = np.zeros(self.shape)
        bottom = np.zeros(self.shape)
        side = np.zeros(self.shape)
        top[:, :, -1] = np.outer(wx, wy)
        bottom[:, :, 0] = np.outer(wx, wy)
        yz = np.outer(wy, wz)
        xz = np.outer(wx, wz)
        side[0, :, :] += yz
        side[-1, :, :] += yz
        side[:, 0, :] += xz
        side[:, -1, :] += xz
        return {TOP: top.ravel(), SIDE: side.ravel(), BOTTOM: bottom.ravel()}

    @cached_property
    def top_weights(self) -> np.ndarray:
        return self.face_weights[TOP][self.top_nodes]

    @cached_property
    def face_areas(self) -> dict[int, float]:
        return {
            TOP: self.Lx * self.Ly,
            BOTTOM: self.Lx * self.Ly,
            SIDE: 2.0 * (self.Lx + self.Ly) * self.thickness,
        }

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Discrete Dirichlet form of int grad u . grad v (no conductivity)."""
        wx, wy, wz = self._weights_1d
        kx = _stiffness_1d(self.nx, self.Lx)
        ky = _stiffness_1d(self.ny, self.Ly)
        kz = _stiffness_1d(self.nz, self.thickness)
        Wx, Wy, Wz = sp.diags(wx), sp.diags(wy), sp.diags(wz)
        K = (
            sp.kron(kx, sp.kron(Wy, Wz))
            + sp.kron(Wx, sp.kron(ky, Wz))
            + sp.kron(Wx, sp.kron(Wy, kz))
        )
        return sp.csr_matrix(K)

    @cached_property
    def time_weights(self) -> np.ndarray:
        return _trapezoid_1d(self.nt + 1, self.T_final)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class LaserPath:
    """Laser spot positions gamma(t_i) on the uniform grid t_i = i T / nt.

    The path is the piecewise-linear interpolant of these samples.
    """

    values: np.ndarray
    T_final: float = 1.0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != 2 or values.shape[0] < 3:
            raise ShapeError(f"path values must have shape (nt+1, 2) with nt >= 2, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("path coordinates must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def nt(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dt(self) -> float:
        return self.T_final / self.nt

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T_final, self.nt + 1)

    def velocities(self) -> np.ndarray:
        """Interval velocities (gamma_{i+1} - gamma_i) / dt, shape (nt, 2)."""
        return np.diff(self.values, axis=0) / self.dt

    def with_values(self, values) -> "LaserPath":
        return LaserPath(values, self.T_final)

    def check_matches(self, grid: SlabGrid):
        if self.nt != grid.nt:
            raise ShapeError(f"path has {self.nt + 1} nodes, grid expects {grid.nt + 1}")
        if not math.isclose(self.T_final, grid.T_final, rel_tol=1e-12):
            raise ShapeError("path and grid time horizons differ")

    @classmethod
    def constant(cls, point, nt: int, T_final: float = 1.0) -> "LaserPath":
        return cls(np.tile(np.asarray(point, dtype=float), (nt + 1, 1)), T_final)

    @classmethod
    def circle(cls, center, radius: float, nt: int, T_final: float = 1.0, turns: float = 1.0,
               phase: float = 0.0) -> "LaserPath":
        t = np.linspace(0.0, T_final, nt + 1)
        angle = phase + 2.0 * math.pi * turns * t / T_final
        c = np.asarray(center, dtype=float)
        return cls(np.column_stack([c[0] + radius * np.cos(angle), c[1] + radius * np.sin(angle)]), T_final)

    @classmethod
    def line(cls, start, end, nt: int, T_final: float = 1.0) -> "LaserPath":
        s = np.linspace(0.0, 1.0, nt + 1)[:, None]
        a, b = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
        return cls((1.0 - s) * a + s * b, T_final)


def h1_seminorm_sq(path: LaserPath) -> float:
    """Squared H1 seminorm of the piecewise-linear path, sum |dgamma|^2 / dt."""
    d = np.diff(path.values, axis=0)
    return float(np.sum(d * d) / path.dt)


class LevelSetRegion:
    """Scan region {x : g(x) <= 0} with callbacks for g, grad g and Hess g.

    All callbacks take points of shape (..., 2) and return arrays of shape
    (...), (..., 2) and (..., 2, 2) respectively.
    """

    def __init__(self, g: Callable, grad: Callable, hess: Callable, scale: float = 1.0,
                 center=None):
        self._g, self._grad, self._hess = g, grad, hess
        self.scale = float(scale)
        self.center = None if center is None else np.asarray(center, dtype=float)

    def value(self, x) -> np.ndarray:
        return self._g(np.asarray(x, dtype=float))

    def grad(self, x) -> np.ndarray:
        return self._grad(np.asarray(x, dtype=float))

    def hess(self, x) -> np.ndarray:
        return self._hess(np.asarray(x, dtype=float))

    def contains(self, x) -> np.ndarray:
        return self.value(x) <= 0.0

    def to_dict(self) -> dict:
        return {"kind": "callback"}


class DiskRegion(LevelSetRegion):
    """g(x) = |x - c|^2 - rho^2."""

    def __init__(self, center, radius: float):
        if not (math.isfinite(radius) and radius > 0):
            raise ConfigError("region.radius", "must be finite and > 0")
        self.radius = float(radius)
        c = np.asarray(center, dtype=float)
        super().__init__(self._value, self._gradient, self._hessian, scale=radius**2, center=c)

    def _value(self, x):
        d = x - self.center
        return np.sum(d * d, axis=-1) - self.radius**2

    def _gradient(self, x):
        return 2.0 * (x - self.center)

    def _hessian(self, x):
        return np.broadcast_to(2.0 * np.eye(2), x.shape[:-1] + (2, 2)).copy()

    def to_dict(self) -> dict:
        return {"kind": "disk", "center": self.center.tolist(), "radius": self.radius}


class SuperellipseRegion(LevelSetRegion):
    """g(x) = ((x1-c1)/a)^p + ((x2-c2)/b)^p - 1 with even p >= 4."""

    def __init__(self, center, semi_axes, degree: int = 4):
        if degree < 4 or degree % 2:
            raise ConfigError("region.degree", "must be an even integer >= 4")
        a = np.asarray(semi_axes, dtype=float)
        if a.shape != (2,) or np.any(a <= 0):
            raise ConfigError("region.semi_axes", "must be two positive numbers")
        self.semi_axes = a
        self.degree = int(degree)
        super().__init__(self._value, self._gradient, self._hessian, scale=1.0,
                         center=np.asarray(center, dtype=float))

    def _value(self, x):
        u = (x - self.center) / self.semi_axes
        return np.sum(u**self.degree, axis=-1) - 1.0

    def _gradient(self, x):
        p = self.degree
        u = (x - self.center) / self.semi_axes
        return p * u ** (p - 1) / self.semi_axes

    def _hessian(self, x):
        p = self.degree
        u = (x - self.center) / self.semi_axes
        diag = p * (p - 1) * u ** (p - 2) / self.semi_axes**2
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = diag[..., 0]
        out[..., 1, 1] = diag[..., 1]
        return out

    def to_dict(self) -> dict:
        return {"kind": "superellipse", "center": self.center.tolist(),
                "semi_axes": self.semi_axes.tolist(), "degree": self.degree}


def _check_pair(path: LaserPath, dpath) -> np.ndarray:
    d = np.asarray(dpath.values if isinstance(dpath, LaserPath) else dpath, dtype=float)
    if d.shape != path.values.shape:
        raise ShapeError(f"direction shape {d.shape} does not match path shape {path.values.shape}")
    return d


def constraint_trace(path: LaserPath, region: LevelSetRegion) -> np.ndarray:
    """(g o gamma)(t_i); the path is feasible iff every entry is <= 0."""
    return region.value(path.values)


def constraint_jacobian_apply(path: LaserPath, region: LevelSetRegion, dpath) -> np.ndarray:
    d = _check_pair(path, dpath)
    return np.einsum("ij,ij->i", region.grad(path.values), d)


def constraint_hessian_form(path: LaserPath, region: LevelSetRegion, dpath1, dpath2) -> np.ndarray:
    d1 = _check_pair(path, dpath1)
    d2 = _check_pair(path, dpath2)
    H = region.hess(path.values)
    # the symmetric average makes swapping the directions bit-exact
    return 0.5 * (np.einsum("ij,ijk,ik->i", d1, H, d2) + np.einsum("ij,ijk,ik->i", d2, H, d1))
