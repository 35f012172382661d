"""Pathwise coupling of the network with its approximating RBM.

Each primitive of the network (Poisson arrivals, exponential ON and OFF
periods, Poisson service clocks, Bernoulli routing indicators) is built
together with a Brownian motion by a dyadic quantile construction: the
Brownian motion is generated top-down through Brownian bridges, and at each
dyadic split the primitive's exact conditional law (binomial, beta or
hypergeometric) is matched to the bridge increment through its quantile
function. The primitive keeps its exact law, the Brownian motion stays a
Brownian motion, and the two remain within logarithmic distance.

The network is then driven by a clocked server: station ``j`` completes a
service at each epoch of ``S_j(C_j(t))`` at which its queue is non-empty.
For exponential services this has the law of the preemptive-resume network.
The RBM driver is assembled from the primitives' Brownian motions with
deterministic time changes, so it is exactly a Brownian motion with the
drift and covariance returned by :func:`onoffnet.analysis.rbm_params`, and
``Z`` is its reflection.

Supported networks: independent Poisson arrivals, exponential service,
reliable or exponential ON/OFF environments, and routing rows with at most
one positive entry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import seeding
from .analysis import analyze
from .arrivals import IndependentRenewal
from .model import NetworkSpec
from .rbm import reflect_values


def _match(z: np.ndarray, ppf, isf) -> np.ndarray:
    """Quantile transform of standard normals ``z``; upper tail through ``isf`` for accuracy."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    lo = z <= 0
    if lo.any():
        out[lo] = ppf(stats.norm.cdf(z[lo]), lo)
    hi = ~lo
    if hi.any():
        out[hi] = isf(stats.norm.sf(z[hi]), hi)
    return out


def _interleave(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(a.size + b.size, dtype=np.result_type(a, b))
    out[0::2] = a
    out[1::2] = b
    return out


@dataclass(frozen=True, eq=False)
class CoupledBrownian:
    """Brownian motion known at dyadic knots; other times filled in by bridges.

    ``var`` is the variance per unit time. ``at`` must be called once with
    every time needed, since each call draws fresh bridge values.
    """

    knots: np.ndarray
    values: np.ndarray
    var: float

    def at(self, t, rng: np.random.Generator) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        if flat.size == 0:
            return np.zeros_like(t)
        if flat.min() < self.knots[0] or flat.max() > self.knots[-1]:
            raise ValueError("query time outside the constructed range")
        order = np.argsort(flat, kind="stable")
        q = flat[order]
        seg = np.clip(np.searchsorted(self.knots, q, side="right") - 1, 0, self.knots.size - 2)
        left, right = self.knots[seg], self.knots[seg + 1]
        # free Brownian motion restarted at each segment's left knot, sampled at
        # the query times and at the segment's right knot
        pts = np.concatenate([q, right])
        segs = np.concatenate([seg, seg])
        is_end = np.concatenate([np.zeros(q.size, bool), np.ones(q.size, bool)])
        o = np.lexsort((is_end, pts, segs))
        sp, ss = pts[o], segs[o]
        first = np.concatenate(([True], ss[1:] != ss[:-1]))
        prev = np.where(first, self.knots[ss], np.concatenate(([0.0], sp[:-1])))
        inc = np.sqrt(self.var * np.maximum(sp - prev, 0.0)) * rng.standard_normal(sp.size)
        cum = np.cumsum(inc)
        start = np.maximum.accumulate(np.where(first, np.arange(sp.size), 0))
        free = np.empty(sp.size)
        free[o] = cum - (cum[start] - inc[start])
        free_q, free_end = free[: q.size], free[q.size:]
        frac = (q - left) / (right - left)
        wl, wr = self.values[seg], self.values[seg + 1]
        w = wl + frac * (wr - wl) + free_q - frac * free_end
        out = np.empty(flat.size)
        out[order] = w
        return out.reshape(t.shape)


def _levels_for(n: float) -> int:
    return max(1, int(math.ceil(math.log2(max(n, 2.0)))))


def kmt_poisson(rate: float, length: float, rng: np.random.Generator, leaf: float = 1.0):
    """Poisson process of ``rate`` on ``[0, >= length]`` coupled with ``W ~ N(t) - rate t``.

    Returns ``(event_times, CoupledBrownian)``.
    """
    m = _levels_for(length / leaf)
    T = leaf * 2 ** m
    knots = np.arange(2 ** m + 1) * leaf
    if rate <= 0:
        return np.zeros(0), CoupledBrownian(knots, np.zeros(knots.size), 0.0)
    z = rng.standard_normal(1)
    w = math.sqrt(rate * T) * z
    mean = rate * T
    n = _match(z, lambda u, _: stats.poisson.ppf(u, mean), lambda u, _: stats.poisson.isf(u, mean))
    block = T
    for _ in range(m):
        z = rng.standard_normal(n.size)
        sd = math.sqrt(rate * block / 4)
        wl = w / 2 + sd * z
        nl = _match(z, lambda u, s: stats.binom.ppf(u, n[s], 0.5),
                    lambda u, s: stats.binom.isf(u, n[s], 0.5))
        nl = np.where(n > 0, nl, 0.0)
        w = _interleave(wl, w - wl)
        n = _interleave(nl, n - nl)
        block /= 2
    counts = n.astype(np.int64)
    starts = np.repeat(knots[:-1], counts)
    times = np.sort(starts + leaf * rng.random(starts.size))
    values = np.concatenate(([0.0], np.cumsum(w)))
    return times, CoupledBrownian(knots, values, rate)


def kmt_exponential(mean: float, count: int, rng: np.random.Generator):
    """At least ``count`` i.i.d. exponentials coupled with ``B(i) ~ sum_{l<=i} (x_l - mean)``.

    Returns ``(x, CoupledBrownian)`` with the Brownian motion indexed by the
    (continuous) summand count.
    """
    m = _levels_for(count)
    N = 2 ** m
    knots = np.arange(N + 1, dtype=float)
    z = rng.standard_normal(1)
    w = mean * math.sqrt(N) * z
    s = _match(z, lambda u, _: stats.gamma.ppf(u, N, scale=mean),
               lambda u, _: stats.gamma.isf(u, N, scale=mean))
    block = N
    for _ in range(m):
        half = block // 2
        z = rng.standard_normal(s.size)
        sd = mean * math.sqrt(block / 4)
        wl = w / 2 + sd * z
        frac = _match(z, lambda u, _: stats.beta.ppf(u, half, half),
                      lambda u, _: stats.beta.isf(u, half, half))
        sl = frac * s
        w = _interleave(wl, w - wl)
        s = _interleave(sl, s - sl)
        block = half
    values = np.concatenate(([0.0], np.cumsum(w)))
    return s, CoupledBrownian(knots, values, mean ** 2)


def kmt_bernoulli(p: float, count: int, rng: np.random.Generator):
    """At least ``count`` Bernoulli(p) indicators coupled with ``B(i) ~ sum (xi_l - p)``."""
    m = _levels_for(count)
    N = 2 ** m
    knots = np.arange(N + 1, dtype=float)
    if p <= 0 or p >= 1:
        xi = np.full(N, 1 if p >= 1 else 0, dtype=np.int64)
        return xi, CoupledBrownian(knots, np.zeros(N + 1), 0.0)
    z = rng.standard_normal(1)
    w = math.sqrt(p * (1 - p) * N) * z
    n = _match(z, lambda u, _: stats.binom.ppf(u, N, p), lambda u, _: stats.binom.isf(u, N, p))
    block = N
    for _ in range(m):
        half = block // 2
        z = rng.standard_normal(n.size)
        sd = math.sqrt(p * (1 - p) * block / 4)
        wl = w / 2 + sd * z
        nl = _match(z, lambda u, s: stats.hypergeom.ppf(u, block, n[s], half),
                    lambda u, s: stats.hypergeom.isf(u, block, n[s], half))
        # degenerate blocks (all zeros or all ones) split deterministically
        nl = np.where(n == 0, 0.0, np.where(n == block, half, nl))
        w = _interleave(wl, w - wl)
        n = _interleave(nl, n - nl)
        block = half
    values = np.concatenate(([0.0], np.cumsum(w)))
    return n.astype(np.int64), CoupledBrownian(knots, values, p * (1 - p))


def unsupported_reason(spec: NetworkSpec) -> str | None:
    """Why ``spec`` is outside the coupled construction, or None if it is supported."""
    arrival = spec.arrival
    if not isinstance(arrival, IndependentRenewal) or any(
            d is not None and not d.is_exponential for d in arrival.interarrival):
        return "arrivals must be independent Poisson streams"
    for j, s in enumerate(spec.stations, start=1):
        if not s.service.is_exponential:
            return f"station {j}: service must be exponential"
        if not s.reliable and not (s.on.is_exponential and s.off.is_exponential):
            return f"station {j}: ON and OFF periods must be exponential"
    if ((spec.routing > 0).sum(axis=1) > 1).any():
        return "each routing row may have at most one positive entry"
    return None


@dataclass(frozen=True, eq=False)
class CoupledPath:
    t: np.ndarray
    Q: np.ndarray
    Z: np.ndarray
    W: np.ndarray

    def sup_distance(self) -> np.ndarray:
        """Running ``sup_{u <= t} ||Q(u) - Z(u)||_inf`` on the grid."""
        return np.maximum.accumulate(np.abs(self.Q - self.Z).max(axis=1))

    def sup_distance_at(self, horizons) -> np.ndarray:
        run = self.sup_distance()
        idx = np.searchsorted(self.t, np.asarray(horizons, dtype=float) * (1 + 1e-12), side="right") - 1
        return run[idx]


def _on_time_to_real(e, u, v):
    """Map cumulative-ON-time values ``e`` to the real times at which they are reached."""
    on_total = np.cumsum(u)
    prev_on = on_total - u
    i = np.searchsorted(on_total, e, side="left")
    up_before = np.concatenate(([0.0], np.cumsum(u + v)))[i]
    return up_before + (e - prev_on[i])


def coupled_path(spec: NetworkSpec, horizon: float, dt: float, seed) -> CoupledPath:
    """Build one coupled (network, RBM) pair on ``[0, horizon]`` sampled every ``dt``."""
    reason = unsupported_reason(spec)
    if reason:
        raise ValueError(f"coupled construction not available: {reason}")
    K = spec.K
    envd, traffic, params = analyze(spec)
    lam = spec.lam
    mu = spec.mu
    alpha = envd.alpha
    r = np.minimum(traffic.rho, 1.0)
    flow = traffic.throughput
    P = spec.routing
    n = int(round(horizon / dt))
    grid = np.arange(n + 1) * dt
    grid[-1] = horizon

    def stream(*key):
        return seeding.rng(seed, seeding.COUPLING, *key)

    events_t, events_kind, events_st = [], [], []
    W = np.tile(np.asarray(spec.initial_queue, dtype=float), (grid.size, 1))
    W += np.outer(grid, lam - (alpha * mu) @ (np.eye(K) - P))

    for k in range(K):
        g = stream(0, k)
        times, bm = kmt_poisson(lam[k], horizon, g)
        times = times[times <= horizon]
        events_t.append(times)
        events_kind.append(np.full(times.size, 1))
        events_st.append(np.full(times.size, k))
        W[:, k] += bm.at(grid, g)

    fluct = np.zeros((grid.size, K))
    routing_seqs = []
    for j, s in enumerate(spec.stations):
        g = stream(1, j)
        if s.reliable:
            wc = np.zeros(grid.size)
            u = np.array([np.inf])
            v = np.array([0.0])
        else:
            a, b = s.on_mean, s.off_mean
            count = int(horizon / (a + b) * 1.3 + 64)
            while True:
                u, bu = kmt_exponential(a, count, g)
                v, bv = kmt_exponential(b, count, g)
                if (u + v).sum() > horizon:
                    break
                count *= 2
            idx = r[j] * grid / (a + b)
            wc = (b * bu.at(idx, g) - a * bv.at(idx, g)) / (a + b)
        on_horizon = min(horizon, float(np.sum(u))) if not s.reliable else horizon
        epochs_on, bs = kmt_poisson(mu[j], max(on_horizon, alpha[j] * r[j] * horizon, 1.0), g)
        epochs_on = epochs_on[epochs_on <= on_horizon]
        if s.reliable:
            real = epochs_on
        else:
            real = _on_time_to_real(epochs_on, u, v)
        real = real[real <= horizon]
        events_t.append(real)
        events_kind.append(np.zeros(real.size, dtype=np.int64))
        events_st.append(np.full(real.size, j))
        fluct[:, j] = bs.at(alpha[j] * r[j] * grid, g) + mu[j] * wc

        dest = np.flatnonzero(P[j] > 0)
        if dest.size:
            p = float(P[j, dest[0]])
            xi, br = kmt_bernoulli(p, max(real.size, 1), g)
            W[:, dest[0]] += br.at(flow[j] * grid, g)
            routing_seqs.append((int(dest[0]), xi))
        else:
            routing_seqs.append((K, None))
    W -= fluct @ (np.eye(K) - P)

    Q = _clocked_network(spec, grid, events_t, events_kind, events_st, routing_seqs)
    Z, _, _ = reflect_values(W, P)
    return CoupledPath(grid, Q, Z, W)


def _clocked_network(spec, grid, events_t, events_kind, events_st, routing_seqs) -> np.ndarray:
    K = spec.K
    t = np.concatenate(events_t) if events_t else np.zeros(0)
    kind = np.concatenate(events_kind).astype(np.int64) if events_kind else np.zeros(0, np.int64)
    st = np.concatenate(events_st).astype(np.int64) if events_st else np.zeros(0, np.int64)
    # service epochs before arrivals at equal times, then by station
    o = np.lexsort((st, kind, t))
    t, kind, st = t[o].tolist(), kind[o].tolist(), st[o].tolist()
    q = list(spec.initial_queue)
    served = [0] * K
    out = np.zeros((grid.size, K), dtype=np.int64)
    g = grid.tolist()
    gi, ng = 0, len(g)
    for tau, kd, j in zip(t, kind, st):
        while gi < ng and g[gi] < tau:
            out[gi] = q
            gi += 1
        if kd == 1:
            q[j] += 1
        elif q[j] > 0:
            q[j] -= 1
            dest, xi = routing_seqs[j]
            if dest < K and xi[served[j]]:
                q[dest] += 1
            served[j] += 1
    while gi < ng:
        out[gi] = q
        gi += 1
    return out
