"""Restarted Lanczos for the smallest eigenpair of a symmetric matrix-free operator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla


@dataclass
class LanczosResult:
    value: float
    vector: np.ndarray
    residual: float
    largest: float
    n_matvec: int
    converged: bool


def smallest_eigenpair(matvec: Callable[[np.ndarray], np.ndarray], n: int, *, krylov_dim: int = 40,
                       max_restarts: int = 30, tol: float = 1e-10, seed: int = 0,
                       v0: np.ndarray | None = None) -> LanczosResult:
    """Smallest eigenvalue of a symmetric operator on R^n.

    Each cycle builds a Krylov basis with full reorthogonalization and
    restarts from the current smallest Ritz vector. Convergence is declared
    when ||A v - theta v|| <= tol * max(1, |largest Ritz value|).
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) if v0 is None else np.array(v0, dtype=float)
    v /= np.linalg.norm(v)
    m = min(krylov_dim, n)
    n_matvec = 0
    largest = 0.0
    theta, x, res = np.nan, v, np.inf
    for _ in range(max_restarts + 1):
        V = np.zeros((n, m))
        alpha = np.zeros(m)
        beta = np.zeros(m)
        V[:, 0] = v
        k = m
        for j in range(m):
            w = matvec(V[:, j])
            n_matvec += 1
            alpha[j] = V[:, j] @ w
            w -= V[:, : j + 1] @ (V[:, : j + 1].T @ w)
            w -= V[:, : j + 1] @ (V[:, : j + 1].T @ w)
            if j + 1 < m:
                b = np.linalg.norm(w)
                if b <= 1e-14 * max(1.0, abs(alpha[j])):
                    k = j + 1  # invariant subspace found
                    break
                beta[j] = b
                V[:, j + 1] = w / b
        evals, evecs = sla.eigh_tridiagonal(alpha[:k], beta[: k - 1])
        largest = max(largest, float(np.max(np.abs(evals))))
        theta = float(evals[0])
        x = V[:, :k] @ evecs[:, 0]
        x /= np.linalg.norm(x)
        r = matvec(x) - theta * x
        n_matvec += 1
        res = float(np.linalg.norm(r))
        if res <= tol * max(1.0, largest) or k == n:
            return LanczosResult(theta, x, res, largest, n_matvec, True)
        v = x
    return LanczosResult(theta, x, res, largest, n_matvec, False)
