"""Empirical checks of the heavy-traffic RBM approximation.

* ``scaled_compare``: marginal comparison of ``Q(nT)/sqrt(n)`` with the RBM
  (drift ``sqrt(n) b``, covariance ``Gamma``) at time ``T`` by
  Kolmogorov-Smirnov distance, plus sup-distance growth from the coupled
  construction in :mod:`onoffnet.coupling` where it applies.
* ``lln_checks``: law-of-large-numbers residuals of cumulative ON time and
  completed services.
* ``rate_diagnostic``: log-log growth exponent of sup-distances against the
  ``o(t^{1/p'})`` rate.

Network replications and RBM paths use independent seeds. All statistics
are deterministic functions of the root seed.
"""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import seeding
from .analysis import STRICT, analyze
from .coupling import coupled_path, unsupported_reason
from .desim import SimPath, simulate
from .model import NetworkSpec
from .rbm import cov_factor, marginal_cdf_1d, reflect_values

P_PRIME_CAP = 3.9
RATE_SLACK = 0.1

# seed keys below (root, scale): network replications, RBM paths, coupled paths
_NETWORK, _RBM, _COUPLED = 0, 1, 2


def default_threads() -> int:
    return os.cpu_count() or 1


def run_replications(fn, jobs, threads: int = 1) -> list:
    """Apply ``fn`` to each job tuple, in order; results do not depend on ``threads``."""
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, *zip(*jobs), chunksize=max(1, len(jobs) // (4 * threads))))


def ks_distance(x, y) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    return float(stats.ks_2samp(np.asarray(x), np.asarray(y)).statistic)


def final_state(spec: NetworkSpec, horizon: float, seed) -> tuple:
    """Q, C and completed services at ``horizon`` for one replication."""
    p = simulate(spec, horizon, horizon, seed)
    return p.Q[-1].copy(), p.C[-1].copy(), p.completions[-1].copy()


def rbm_marginals(params, scale: float, w0, T: float, dt: float, paths: int, rng) -> np.ndarray:
    """Z(T) for ``paths`` RBM paths with drift ``sqrt(scale) b`` started at ``w0``."""
    steps = max(1, int(round(T / dt)))
    h = T / steps
    K = params.K
    L = cov_factor(params.cov)
    drift = math.sqrt(scale) * params.drift
    out = np.empty((paths, K))
    P = np.eye(K) - params.reflection
    # chunk over paths to bound memory; draws are sequential so chunking
    # does not change the values
    chunk = max(1, 200_000 // (steps * K))
    for s in range(0, paths, chunk):
        m = min(chunk, paths - s)
        z = rng.standard_normal((m, steps, K))
        inc = drift * h + math.sqrt(h) * (z @ L.T)
        W = np.concatenate([np.broadcast_to(w0, (m, 1, K)), w0 + np.cumsum(inc, axis=1)], axis=1)
        Z, _, _ = reflect_values(W, P)
        out[s:s + m] = Z[:, -1, :]
    return out


@dataclass
class ScaleResult:
    n: float
    X: np.ndarray
    Z: np.ndarray
    ks: list
    ks_closed_form: list
    excluded: list
    fluid_rate: np.ndarray
    on_fraction_residual: np.ndarray
    departure_rate_residual: np.ndarray
    sup_distance: float | None = None


@dataclass
class ScalingReport:
    T: float
    reps: int
    seed: int
    classes: tuple
    results: list = field(default_factory=list)
    sup_growth_exponent: float | None = None
    coupling_note: str | None = None

    def to_csv(self) -> str:
        """Long-format table: one row per (scale, station, statistic)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "station", "statistic", "value"])
        for r in self.results:
            for k in range(r.X.shape[1]):
                rows = [("ks", r.ks[k]), ("ks_closed_form", r.ks_closed_form[k]),
                        ("mean_X", float(r.X[:, k].mean())), ("mean_Z", float(r.Z[:, k].mean())),
                        ("fluid_rate", float(r.fluid_rate[k])),
                        ("on_fraction_residual", float(r.on_fraction_residual[k])),
                        ("departure_rate_residual", float(r.departure_rate_residual[k]))]
                for name, value in rows:
                    w.writerow([repr(float(r.n)), k + 1, name,
                                "" if value is None else repr(float(value))])
            if r.sup_distance is not None:
                w.writerow([repr(float(r.n)), "", "sup_distance", repr(float(r.sup_distance))])
        if self.sup_growth_exponent is not None:
            w.writerow(["", "", "sup_growth_exponent", repr(float(self.sup_growth_exponent))])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"T={self.T} reps={self.reps} seed={self.seed}",
                 "classes: " + ", ".join(self.classes)]
        for r in self.results:
            ks = ", ".join("excluded" if e else f"{v:.4f}" for v, e in zip(r.ks, r.excluded))
            line = f"n={r.n:g}: KS=[{ks}]"
            if r.sup_distance is not None:
                line += f" sup|Q-Z|={r.sup_distance:.4g}"
            lines.append(line)
        if self.sup_growth_exponent is not None:
            lines.append(f"sup-distance growth exponent in n: {self.sup_growth_exponent:.4f}")
        if self.coupling_note:
            lines.append(f"sup-distance not computed: {self.coupling_note}")
        return "\n".join(lines) + "\n"


def _ks_rbm_1d(x, T, drift, var, z0) -> float:
    """One-sample KS distance of ``x`` from the 1-D RBM marginal at ``T``."""
    if var <= 0:
        # point mass at c: sup |F_n - F| is the sample mass on either side of c
        c = max(z0 + drift * T, 0.0)
        return float(max(np.mean(x < c), np.mean(x > c)))
    return float(stats.kstest(x, lambda z: marginal_cdf_1d(z, T, drift, var, z0)).statistic)


def _decoupled(P: np.ndarray, k: int) -> bool:
    return not P[k].any() and not P[:, k].any()


def scaled_compare(spec: NetworkSpec, T: float, scales, reps: int, seed: int,
                   rbm_dt: float = 1e-3, coupled_reps: int = 5, coupled_dt: float = 0.5,
                   threads: int = 1) -> ScalingReport:
    """Compare diffusion-scaled queue lengths with the fitted RBM at time ``T``.

    Strict bottlenecks grow at a fluid rate and are excluded from the KS
    comparison; their ``fluid_rate`` (``Q(nT)/(nT)``) is reported instead.
    """
    envd, traffic, params = analyze(spec)
    K = spec.K
    P = spec.routing
    q0 = np.asarray(spec.initial_queue, dtype=float)
    report = ScalingReport(float(T), int(reps), int(seed), traffic.classes)
    reason = unsupported_reason(spec)
    report.coupling_note = reason
    sups = []
    for n in scales:
        horizon = n * T
        jobs = [(spec, horizon, seeding.seed_sequence(seed, int(n), _NETWORK, i)) for i in range(reps)]
        out = run_replications(final_state, jobs, threads)
        Qn = np.array([o[0] for o in out], dtype=float)
        Cn = np.array([o[1] for o in out])
        Sn = np.array([o[2] for o in out], dtype=float)
        X = Qn / math.sqrt(n)
        Z = rbm_marginals(params, n, q0 / math.sqrt(n), T, rbm_dt, reps,
                          seeding.rng(seed, int(n), _RBM))
        ks, ks_cf, excluded = [], [], []
        for k in range(K):
            if traffic.classes[k] == STRICT:
                ks.append(None)
                ks_cf.append(None)
                excluded.append(True)
                continue
            excluded.append(False)
            ks.append(ks_distance(X[:, k], Z[:, k]))
            if _decoupled(P, k):
                ks_cf.append(_ks_rbm_1d(X[:, k], T, math.sqrt(n) * params.drift[k],
                                        params.cov[k, k], q0[k] / math.sqrt(n)))
            else:
                ks_cf.append(None)
        res = ScaleResult(
            n=float(n), X=X, Z=Z, ks=ks, ks_closed_form=ks_cf, excluded=excluded,
            fluid_rate=Qn.mean(axis=0) / horizon,
            on_fraction_residual=Cn.mean(axis=0) / horizon - envd.alpha,
            departure_rate_residual=Sn.mean(axis=0) / horizon - traffic.throughput,
        )
        if reason is None:
            d = [coupled_path(spec, horizon, min(coupled_dt, horizon),
                              seeding.seed_sequence(seed, int(n), _COUPLED, i)).sup_distance()[-1]
                 for i in range(coupled_reps)]
            res.sup_distance = float(np.mean(d))
            sups.append(res.sup_distance)
        report.results.append(res)
    if reason is None and len(scales) >= 2:
        report.sup_growth_exponent = _loglog_slope(np.asarray(scales, float), np.asarray(sups))
    return report


def _loglog_slope(t: np.ndarray, d: np.ndarray) -> float:
    d = np.asarray(d, dtype=float)
    if not (d > 0).any():
        return 0.0
    # zero distances (exact agreement) are floored at the smallest positive one
    d = np.where(d > 0, d, d[d > 0].min())
    return float(np.polyfit(np.log(t), np.log(d), 1)[0])


@dataclass(frozen=True)
class RateDiagnostic:
    slope: float
    p_prime: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.slope < self.threshold


def p_prime(p: float) -> float:
    """Approximation order: ``p`` below 4, otherwise capped just below 4."""
    return min(float(p), P_PRIME_CAP)


def rate_diagnostic(horizons, sup_distances, p: float) -> RateDiagnostic:
    """Fit the log-log slope of sup-distance against horizon and compare with ``1/p' + 0.1``."""
    t = np.asarray(horizons, dtype=float)
    d = np.asarray(sup_distances, dtype=float)
    if t.size != d.size:
        raise ValueError("horizons and distances differ in length")
    if t.size < 4 or (t <= 0).any() or math.log10(t.max() / t.min()) < 2 - 1e-12:
        raise ValueError("need at least 4 horizons spanning at least two decades")
    pp = p_prime(p)
    return RateDiagnostic(_loglog_slope(t, d), pp, 1.0 / pp + RATE_SLACK)


def coupled_sup_distances(spec: NetworkSpec, horizons, reps: int, seed: int,
                          dt: float = 0.5, threads: int = 1) -> np.ndarray:
    """Running sup-distances ``(reps, len(horizons))`` from nested coupled paths."""
    horizons = np.asarray(horizons, dtype=float)
    jobs = [(spec, float(horizons.max()), dt, seeding.seed_sequence(seed, i, seeding.COUPLING), horizons)
            for i in range(reps)]
    return np.array(run_replications(_coupled_sups, jobs, threads))


def _coupled_sups(spec, horizon, dt, seed, horizons):
    return coupled_path(spec, horizon, dt, seed).sup_distance_at(horizons)


@dataclass(frozen=True)
class LLNRow:
    station: int
    quantity: str
    value: float
    target: float
    residual: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.residual < self.threshold


def lln_checks(path: SimPath, envd, spec: NetworkSpec, traffic=None, z: float = 4.0) -> list[LLNRow]:
    """Law-of-large-numbers residuals at the end of ``path``.

    Thresholds are ``z`` CLT standard deviations plus one count of
    discreteness. Bottleneck stations are checked on completions per unit
    time against ``alpha_j mu_j``, as is any station whose server was busy
    for all of its ON time; other nonbottlenecks on completions per unit busy
    time against ``mu_j``.
    """
    if traffic is None:
        _, traffic, _ = analyze(spec)
    t = float(path.t[-1])
    mu = spec.mu
    sv = spec.service_var
    rows = []
    for j in range(spec.K):
        C = float(path.C[-1, j])
        a, D = float(envd.alpha[j]), float(envd.D[j])
        rows.append(LLNRow(j + 1, "C/t", C / t, a, abs(C / t - a), z * math.sqrt(D / t) + 1.0 / t))
        S = float(path.completions[-1, j])
        B = float(path.B[-1, j])
        # bottlenecks, and any server never idle while ON, serve at rate alpha*mu
        if traffic.rho[j] >= 1 - 1e-9 or B >= C - 1e-9 * max(1.0, t):
            target = a * mu[j]
            sd = math.sqrt((sv[j] * mu[j] ** 3 * a + mu[j] ** 2 * D) / t)
            rows.append(LLNRow(j + 1, "S/t", S / t, target, abs(S / t - target), z * sd + 1.0 / t))
        elif B > 0:
            sd = math.sqrt(sv[j] * mu[j] ** 3 / B)
            rows.append(LLNRow(j + 1, "S/B", S / B, float(mu[j]), abs(S / B - mu[j]),
                               z * sd + 1.0 / B))
    return rows


def format_lln(rows: list[LLNRow]) -> str:
    lines = [f"{'station':>7} {'quantity':>8} {'value':>12} {'target':>12} {'residual':>12} {'threshold':>12}  ok"]
    for r in rows:
        lines.append(f"{r.station:>7} {r.quantity:>8} {r.value:>12.6g} {r.target:>12.6g} "
                     f"{r.residual:>12.4g} {r.threshold:>12.4g}  {'yes' if r.passed else 'NO'}")
    return "\n".join(lines) + "\n"
