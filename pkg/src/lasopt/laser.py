"""Gaussian beam source on the top face and its path derivatives."""

from __future__ import annotations

import warnings

import numpy as np

from lasopt.model import LaserPath, ModelConfig, ShapeError, SlabGrid


class ResolutionWarning(UserWarning):
    """The beam radius is not resolved by the top-face grid."""


def _offsets(grid: SlabGrid, path: LaserPath):
    path.check_matches(grid)
    xt = grid.top_xy[None, :, :] - path.values[:, None, :]  # (nt+1, n_top, 2)
    return xt


def _exp_w(config: ModelConfig, xt: np.ndarray) -> np.ndarray:
    return np.exp(-2.0 * np.sum(xt * xt, axis=-1) / config.beam_radius**2)


def _direction(path: LaserPath, dpath) -> np.ndarray:
    d = np.asarray(dpath.values if isinstance(dpath, LaserPath) else dpath, dtype=float)
    if d.shape != path.values.shape:
        raise ShapeError(f"direction shape {d.shape} does not match path shape {path.values.shape}")
    return d


def source_field(config: ModelConfig, grid: SlabGrid, path: LaserPath) -> np.ndarray:
    """Absorbed flux at every top node and time step, shape (nt+1, n_top) in W/m^2."""
    if config.beam_radius < 2.0 * min(grid.dx, grid.dy):
        warnings.warn(
            f"beam radius {config.beam_radius:g} is below twice the top-face spacing "
            f"{min(grid.dx, grid.dy):g}; the source is under-resolved",
            ResolutionWarning,
            stacklevel=2,
        )
    return config.peak_flux * _exp_w(config, _offsets(grid, path))


def linearized_source(config: ModelConfig, grid: SlabGrid, path: LaserPath, dpath) -> np.ndarray:
    """Directional derivative of source_field along dpath (includes c_R)."""
    d = _direction(path, dpath)
    xt = _offsets(grid, path)
    return config.c_R * _exp_w(config, xt) * np.einsum("tnk,tk->tn", xt, d)


def second_source(config: ModelConfig, grid: SlabGrid, path: LaserPath, dpath1, dpath2) -> np.ndarray:
    """Second directional derivative of source_field divided by c_R."""
    d1 = _direction(path, dpath1)
    d2 = _direction(path, dpath2)
    xt = _offsets(grid, path)
    a1 = np.einsum("tnk,tk->tn", xt, d1)
    a2 = np.einsum("tnk,tk->tn", xt, d2)
    dot = np.sum(d1 * d2, axis=-1)[:, None]
    return _exp_w(config, xt) * ((4.0 / config.beam_radius**2) * a1 * a2 - dot)
