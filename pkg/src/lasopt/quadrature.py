"""Time-quadrature weights for sliding windows on a uniform grid.

Nodal time series are treated as piecewise-linear interpolants, so window
integrals, point values and slopes are all linear functionals of the nodes.
"""

from __future__ import annotations

import numpy as np


def trapezoid_weights(nt: int, T: float) -> np.ndarray:
    w = np.full(nt + 1, T / nt)
    w[0] = w[-1] = 0.5 * T / nt
    return w


def _locate(t: float, nt: int, T: float) -> tuple[int, float]:
    """Interval index k and local coordinate u in [0, 1] with t = (k + u) dt."""
    s = min(max(t / T * nt, 0.0), float(nt))
    k = min(int(np.floor(s)), nt - 1)
    return k, s - k


def window_weights(a: float, b: float, nt: int, T: float) -> np.ndarray:
    """Weights c_n with sum_n c_n phi_n equal to the integral over [a, b] of the interpolant."""
    dt = T / nt
    c = np.zeros(nt + 1)
    if b <= a:
        return c
    ka, ua = _locate(a, nt, T)
    kb, ub = _locate(b, nt, T)
    for k in range(ka, kb + 1):
        u0 = ua if k == ka else 0.0
        u1 = ub if k == kb else 1.0
        if u1 <= u0:
            continue
        # integral of (1-u) and u over [u0, u1], scaled by dt
        c[k] += dt * ((u1 - u0) - 0.5 * (u1 * u1 - u0 * u0))
        c[k + 1] += dt * 0.5 * (u1 * u1 - u0 * u0)
    return c


def interp_weights(t: float, nt: int, T: float) -> np.ndarray:
    """Weights giving the interpolant's value at t."""
    k, u = _locate(t, nt, T)
    c = np.zeros(nt + 1)
    c[k] = 1.0 - u
    c[k + 1] = u
    return c


def slope_weights(t: float, nt: int, T: float) -> np.ndarray:
    """Weights giving the interpolant's slope on the interval containing t.

    At a node the interval to the right is used (the left one at t = T).
    """
    k, _ = _locate(t, nt, T)
    c = np.zeros(nt + 1)
    c[k] = -nt / T
    c[k + 1] = nt / T
    return c
