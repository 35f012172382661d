"""Traffic equations, bottleneck classes and reflected-Brownian-motion parameters."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .model import EnvDerived, NetworkSpec, env_derived

CLASS_TOL = 1e-9
NONBOTTLENECK = "nonbottleneck"
BALANCED = "balanced-bottleneck"
STRICT = "strict-bottleneck"


class TrafficNotConverged(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TrafficSolution:
    gamma: np.ndarray
    rho: np.ndarray
    classes: tuple
    capacity: np.ndarray
    iterations: int
    residual: float

    @property
    def throughput(self) -> np.ndarray:
        """Long-run departure rate of each station, min(gamma_j, alpha_j mu_j)."""
        return np.minimum(self.gamma, self.capacity)


@dataclass(frozen=True, eq=False)
class RbmParams:
    drift: np.ndarray
    cov: np.ndarray
    reflection: np.ndarray

    @property
    def K(self) -> int:
        return self.drift.size


def classify(rho: float, tol: float = CLASS_TOL) -> str:
    if rho < 1 - tol:
        return NONBOTTLENECK
    if rho > 1 + tol:
        return STRICT
    return BALANCED


def traffic_residual(gamma, lam, capacity, P) -> float:
    return float(np.max(np.abs(gamma - lam - np.minimum(gamma, capacity) @ P), initial=0.0))


def solve_traffic(spec: NetworkSpec, envd: EnvDerived | None = None, lam=None,
                  gamma0=None, tol: float = 1e-12, max_iter: int = 1_000_000) -> TrafficSolution:
    """Solve gamma = lam + min(gamma, alpha*mu) P by fixed-point iteration.

    Starting from ``gamma0 = lam`` the iterates increase monotonically to the
    unique solution; the map contracts at the rate of the spectral radius
    of P.
    """
    envd = envd or env_derived(spec)
    lam = spec.lam if lam is None else np.asarray(lam, dtype=float)
    P = spec.routing
    cap = envd.alpha * spec.mu
    gamma = lam.copy() if gamma0 is None else np.asarray(gamma0, dtype=float).copy()
    for it in range(1, max_iter + 1):
        new = lam + np.minimum(gamma, cap) @ P
        step = float(np.max(np.abs(new - gamma), initial=0.0))
        gamma = new
        if step < tol:
            break
    else:
        raise TrafficNotConverged(
            f"traffic equations did not converge in {max_iter} iterations; "
            "check that the routing matrix has spectral radius < 1")
    rho = gamma / cap
    return TrafficSolution(gamma, rho, tuple(classify(r) for r in rho), cap, it,
                           traffic_residual(gamma, lam, cap, P))


def rbm_params(spec: NetworkSpec, envd: EnvDerived, traffic: TrafficSolution,
               lam=None, V=None) -> RbmParams:
    """Drift, covariance and reflection matrix of the approximating RBM."""
    if lam is None or V is None:
        lam, V = spec.arrival.analytic_lv()
    lam = np.asarray(lam, dtype=float)
    V = np.asarray(V, dtype=float)
    K = spec.K
    P = spec.routing
    I = np.eye(K)
    R = I - P
    mu = spec.mu
    alpha, D = envd.alpha, envd.D
    drift = lam - (alpha * mu) @ R

    flow = np.minimum(traffic.gamma, alpha * mu)
    service = (spec.service_var * mu ** 3 * alpha + mu ** 2 * D) * np.minimum(traffic.rho, 1.0)
    routing_term = np.zeros((K, K))
    for j in range(K):
        routing_term += flow[j] * (np.diag(P[j]) - np.outer(P[j], P[j]))
    # rows of (P - I) are the jumps p_j. - e_j caused by one departure from j
    jumps = P - I
    service_term = jumps.T @ np.diag(service) @ jumps
    cov = V + routing_term + service_term
    return RbmParams(drift, 0.5 * (cov + cov.T), R)


def analyze(spec: NetworkSpec):
    envd = env_derived(spec)
    traffic = solve_traffic(spec, envd)
    lam, V = spec.arrival.analytic_lv()
    return envd, traffic, rbm_params(spec, envd, traffic, lam, V)


def format_tables(spec: NetworkSpec, envd, traffic, params) -> str:
    """Aligned plain-text tables of the per-station results, drift and covariance."""
    lam = spec.lam
    lines = [f"{'station':>7} {'lambda':>12} {'alpha':>10} {'D':>10} {'gamma':>12} "
             f"{'rho':>10} {'class':>20} {'drift':>12}"]
    for j in range(spec.K):
        lines.append(f"{j + 1:>7} {lam[j]:>12.6g} {envd.alpha[j]:>10.6g} {envd.D[j]:>10.6g} "
                     f"{traffic.gamma[j]:>12.6g} {traffic.rho[j]:>10.6g} "
                     f"{traffic.classes[j]:>20} {params.drift[j]:>12.6g}")
    lines.append("")
    lines.append("covariance Gamma:")
    for row in params.cov:
        lines.append("  " + " ".join(f"{x:>12.6g}" for x in row))
    lines.append("reflection matrix I - P:")
    for row in params.reflection:
        lines.append("  " + " ".join(f"{x:>12.6g}" for x in row))
    return "\n".join(lines) + "\n"


def to_csv(spec: NetworkSpec, envd, traffic, params) -> str:
    K = spec.K
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["station", "lambda", "alpha", "D", "gamma", "rho", "class", "drift"]
               + [f"Gamma_{j}" for j in range(1, K + 1)])
    lam = spec.lam
    for j in range(K):
        w.writerow([j + 1, repr(float(lam[j])), repr(float(envd.alpha[j])), repr(float(envd.D[j])),
                    repr(float(traffic.gamma[j])), repr(float(traffic.rho[j])), traffic.classes[j],
                    repr(float(params.drift[j]))] + [repr(float(x)) for x in params.cov[j]])
    return buf.getvalue()
