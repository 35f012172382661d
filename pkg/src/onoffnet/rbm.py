"""Reflected Brownian motion in the non-negative orthant.

``sample_brownian`` draws a Brownian motion with drift ``b`` and covariance
``Gamma`` on a uniform grid. ``reflect`` solves the discrete Skorokhod
problem ``Z = W + Y (I - P)`` (row-vector convention) with ``Z >= 0``,
``Y`` nondecreasing from 0 and ``Y_j`` increasing only when ``Z_j = 0``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np


class ReflectionNotConverged(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DrivingPath:
    grid: np.ndarray
    values: np.ndarray
    drift: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class ReflectedPath:
    grid: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    iterations: int = 0

    def to_csv(self) -> str:
        K = self.Z.shape[-1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"Z_{j}" for j in range(1, K + 1)] + [f"Y_{j}" for j in range(1, K + 1)])
        for i, t in enumerate(self.grid):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in self.Z[i]]
                       + [repr(float(x)) for x in self.Y[i]])
        return buf.getvalue()


def cov_factor(cov) -> np.ndarray:
    """Matrix ``L`` with ``L @ L.T == cov`` via a clipped symmetric eigendecomposition.

    Eigenvalues below ``1e-12 * trace`` are set to zero, so semidefinite
    covariances from degenerate networks are accepted.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    scale = max(1.0, float(np.max(np.abs(cov), initial=0.0)))
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * scale):
        raise ValueError("covariance matrix is not symmetric")
    w, U = np.linalg.eigh(0.5 * (cov + cov.T))
    w = np.where(w < 1e-12 * max(np.trace(cov), 0.0), 0.0, w)
    return U * np.sqrt(w)


def sample_brownian(drift, cov, w0, n: int, dt: float, rng: np.random.Generator,
                    paths: int | None = None) -> DrivingPath:
    """Brownian motion on the grid ``0, dt, ..., n*dt`` started at ``w0``.

    With ``paths`` set, ``values`` has shape ``(paths, n + 1, K)``.
    """
    drift = np.atleast_1d(np.asarray(drift, dtype=float))
    w0 = np.broadcast_to(np.asarray(w0, dtype=float), drift.shape)
    if (w0 < 0).any():
        raise ValueError("initial point must lie in the non-negative orthant")
    L = cov_factor(cov)
    K = drift.size
    shape = (n, K) if paths is None else (paths, n, K)
    z = rng.standard_normal(shape)
    inc = drift * dt + np.sqrt(dt) * (z @ L.T)
    start = np.broadcast_to(w0, shape[:-2] + (1, K))
    values = np.concatenate([start, start + np.cumsum(inc, axis=-2)], axis=-2)
    grid = np.arange(n + 1) * dt
    return DrivingPath(grid, values, drift, np.asarray(cov, dtype=float))


def skorokhod_iterates(W: np.ndarray, P):
    """Successive fixed-point iterates ``Y^(1), Y^(2), ...`` of the reflection map.

    ``Y^(m+1)_j(t_i) = max_{l <= i} (-W_j(t_l) + sum_k Y^(m)_k(t_l) p_kj)^+``
    starting from ``Y^(0) = 0``; the iterates increase monotonically in ``m``.
    """
    W = np.asarray(W, dtype=float)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Y = np.zeros_like(W)
    while True:
        Y = np.maximum.accumulate(np.maximum(-W + Y @ P, 0.0), axis=-2)
        yield Y


def reflect_values(W: np.ndarray, P, tol: float = 1e-12, max_iter: int = 100_000):
    """Fixed-point solution ``(Z, Y, iterations)`` for driver values ``W`` of shape (..., n+1, K).

    Iterates the map of :func:`skorokhod_iterates` until the sup-norm change
    is below ``tol``.
    """
    W = np.asarray(W, dtype=float)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if not P.any():
        Y = np.maximum.accumulate(np.maximum(-W, 0.0), axis=-2)
        return W + Y, Y, 1
    Y = np.zeros_like(W)
    for it, new in enumerate(skorokhod_iterates(W, P), start=1):
        change = float(np.max(np.abs(new - Y), initial=0.0))
        Y = new
        if change < tol:
            break
        if it >= max_iter:
            raise ReflectionNotConverged("reflection map did not converge; spectral radius of P must be < 1")
    Z = W + Y @ (np.eye(P.shape[0]) - P)
    return Z, Y, it


def reflect(path: DrivingPath, P) -> ReflectedPath:
    Z, Y, it = reflect_values(path.values, P)
    return ReflectedPath(path.grid, Z, Y, it)


def reflect_1d(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One-dimensional Skorokhod map: ``Y(t) = max_{s<=t} (-w(s))^+``, ``Z = w + Y``."""
    Y = np.maximum.accumulate(np.maximum(-np.asarray(w, dtype=float), 0.0), axis=-1)
    return w + Y, Y


def stationary_mean_1d(drift: float, var: float) -> float:
    """Mean of the stationary law (exponential) of a 1-D RBM with negative drift."""
    if drift >= 0:
        raise ValueError("a stationary law needs negative drift")
    return var / (2.0 * abs(drift))


def marginal_cdf_1d(z, t: float, drift: float, var: float, z0: float = 0.0):
    """P(Z(t) <= z) for the 1-D RBM started at ``z0``."""
    from scipy.stats import norm

    z = np.asarray(z, dtype=float)
    if var <= 0:
        return (z >= max(z0 + drift * t, 0.0)).astype(float)
    s = np.sqrt(var * t)
    a = norm.cdf((z - z0 - drift * t) / s)
    # image term; exp factor times a small normal tail, computed in log space
    log_b = 2 * drift * z / var + norm.logcdf((-z - z0 - drift * t) / s)
    return np.where(z < 0, 0.0, a - np.exp(log_b))
