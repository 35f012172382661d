"""Event-driven simulation of the network with unreliable servers.

Service at a station progresses only while its server is ON and the queue is
non-empty. A breakdown freezes the customer in service; after repair the
same customer resumes with the remaining requirement it had at the
breakdown. Customers are served FIFO and routed independently by the rows
of the routing matrix.

Simultaneous events are processed as: service completions, then
environment transitions, then external arrivals; ties within a class go by
station index. A completion at the instant of a breakdown therefore counts.
"""
from __future__ import annotations

import csv
import io
import math
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from . import env as envmod
from . import seeding
from .arrivals import ArrivalPath
from .env import EnvPath
from .model import NetworkSpec

_BATCH = 1024
INF = math.inf


@dataclass(frozen=True, eq=False)
class SimPath:
    """Network state sampled on a time grid.

    ``departures[i, j, d]`` counts customers that finished service at station
    ``j`` by ``t[i]`` and went to station ``d`` (``d == K`` means exit).
    ``area[i, j]`` is the integral of ``Q_j`` over ``[0, t[i]]``.
    """

    t: np.ndarray
    Q: np.ndarray
    B: np.ndarray
    C: np.ndarray
    A: np.ndarray
    departures: np.ndarray
    area: np.ndarray
    initial_queue: np.ndarray
    seed: tuple

    @property
    def K(self) -> int:
        return self.Q.shape[1]

    @property
    def completions(self) -> np.ndarray:
        """S_j(B_j(t)): services completed at each station."""
        return self.departures.sum(axis=2)

    @property
    def internal_arrivals(self) -> np.ndarray:
        return self.departures[:, :, : self.K].sum(axis=1)

    def time_average_queue(self) -> np.ndarray:
        return self.area[-1] / self.t[-1]

    def flow_violation(self) -> int:
        """Largest deviation from Q = Q(0) + A + internal arrivals - departures."""
        rhs = self.initial_queue + self.A + self.internal_arrivals - self.completions
        return int(np.abs(self.Q - rhs).max(initial=0))

    def to_csv(self) -> str:
        K = self.K
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"{n}_{j}" for n in ("Q", "B", "C", "A") for j in range(1, K + 1)])
        for i in range(self.t.size):
            row = [repr(float(self.t[i]))]
            row += [int(x) for x in self.Q[i]]
            row += [repr(float(x)) for x in self.B[i]]
            row += [repr(float(x)) for x in self.C[i]]
            row += [int(x) for x in self.A[i]]
            w.writerow(row)
        return buf.getvalue()


def sample_grid(horizon: float, sample_dt: float) -> np.ndarray:
    if horizon <= 0:
        return np.zeros(1)
    n = int(math.floor(horizon / sample_dt + 1e-9))
    grid = np.arange(n + 1) * sample_dt
    grid = grid[grid <= horizon]
    if horizon - grid[-1] > 1e-12 * max(1.0, horizon):
        grid = np.append(grid, horizon)
    else:
        grid[-1] = horizon
    return grid


class _Draws:
    """Buffered i.i.d. draws so the event loop stays in plain Python floats."""

    def __init__(self, sampler, rng):
        self._sampler = sampler
        self._rng = rng
        self._buf = []
        self._i = 0

    def __call__(self) -> float:
        if self._i == len(self._buf):
            self._buf = self._sampler(self._rng, _BATCH).tolist()
            self._i = 0
        x = self._buf[self._i]
        self._i += 1
        return x


def simulate(spec: NetworkSpec, horizon: float, sample_dt: float, seed,
             arrival_path: ArrivalPath | None = None, env_path: EnvPath | None = None) -> SimPath:
    """Run one replication on ``[0, horizon]`` and sample it every ``sample_dt``.

    ``seed`` is a root seed or ``SeedSequence``; arrivals, environment,
    services and routing use separate child streams. Pre-generated arrival
    or environment paths may be passed in instead.
    """
    K = spec.K
    horizon = float(horizon)
    if sample_dt <= 0:
        raise ValueError("sample_dt must be positive")
    grid = sample_grid(horizon, sample_dt).tolist()
    ng = len(grid)

    if arrival_path is None:
        arrival_path = spec.arrival.generate(horizon, seeding.rng(seed, seeding.ARRIVALS))
    if env_path is None:
        env_path = envmod.generate_env(spec, horizon, seeding.rng(seed, seeding.ENVIRONMENT))
    service = [_Draws(s.service.sample, seeding.rng(seed, seeding.SERVICE, j))
               for j, s in enumerate(spec.stations)]
    route_u = [_Draws(lambda r, n: r.random(n), seeding.rng(seed, seeding.ROUTING, j))
               for j in range(K)]
    cum_route = [np.cumsum(row).tolist() for row in spec.routing]

    at = arrival_path.times.tolist() + [INF]
    ac = arrival_path.coords.tolist()
    ab = arrival_path.batches.tolist()
    ai = 0
    switches = [st.switches().tolist() + [INF] for st in env_path.stations]
    sw_i = [0] * K
    nenv = [sw[0] for sw in switches]

    q = list(spec.initial_queue)
    q0 = np.array(q, dtype=np.int64)
    on = [True] * K
    rem = [0.0] * K
    comp = [INF] * K
    for j in range(K):
        if q[j] > 0:
            rem[j] = service[j]()
            comp[j] = rem[j]
    A = [0] * K
    dep = [[0] * (K + 1) for _ in range(K)]
    B = [0.0] * K
    C = [0.0] * K
    area = [0.0] * K
    t_last = 0.0

    Qs = np.zeros((ng, K), dtype=np.int64)
    Bs = np.zeros((ng, K))
    Cs = np.zeros((ng, K))
    As = np.zeros((ng, K), dtype=np.int64)
    Ds = np.zeros((ng, K, K + 1), dtype=np.int64)
    Ar = np.zeros((ng, K))
    gi = 0

    def record(g):
        h = g - t_last
        Qs[gi] = q
        As[gi] = A
        Ds[gi] = dep
        for j in range(K):
            c, b = C[j], B[j]
            if on[j] and h > 0:
                c = min(c + h, g)
                if q[j] > 0:
                    b = b + h
            Cs[gi, j] = c
            Bs[gi, j] = min(b, c)
            Ar[gi, j] = area[j] + q[j] * h

    def arrive(k, tau, n):
        if q[k] == 0:
            rem[k] = service[k]()
            if on[k]:
                comp[k] = tau + rem[k]
        q[k] += n

    while True:
        tc = min(comp)
        te = min(nenv)
        ta = at[ai]
        if tc <= te and tc <= ta:
            tau, kind = tc, 0
        elif te <= ta:
            tau, kind = te, 1
        else:
            tau, kind = ta, 2
        if tau > horizon:
            break
        while gi < ng and grid[gi] < tau:
            record(grid[gi])
            gi += 1
        dt = tau - t_last
        if dt > 0:
            for j in range(K):
                if on[j]:
                    c = C[j] + dt
                    C[j] = c if c < tau else tau
                    if q[j] > 0:
                        b = B[j] + dt
                        B[j] = b if b < C[j] else C[j]
                if q[j]:
                    area[j] += q[j] * dt
            t_last = tau

        if kind == 0:
            j = comp.index(tc)
            q[j] -= 1
            comp[j] = INF
            if q[j] > 0:
                rem[j] = service[j]()
                comp[j] = tau + rem[j]
            d = bisect_right(cum_route[j], route_u[j]())
            dep[j][d] += 1
            if d < K:
                arrive(d, tau, 1)
        elif kind == 1:
            j = nenv.index(te)
            if on[j]:
                on[j] = False
                if comp[j] < INF:
                    rem[j] = comp[j] - tau
                    comp[j] = INF
            else:
                on[j] = True
                if q[j] > 0:
                    comp[j] = tau + rem[j]
            sw_i[j] += 1
            nenv[j] = switches[j][sw_i[j]]
        else:
            k = ac[ai]
            A[k] += ab[ai]
            arrive(k, tau, ab[ai])
            ai += 1

    while gi < ng:
        record(grid[gi])
        gi += 1

    seed_info = _seed_info(seed)
    return SimPath(np.array(grid), Qs, Bs, Cs, As, Ds, Ar, q0, seed_info)


def _seed_info(seed) -> tuple:
    if isinstance(seed, np.random.SeedSequence):
        return (seed.entropy,) + tuple(seed.spawn_key)
    return (int(seed),)


def busy_minus_on_check(path: SimPath) -> float:
    """Largest violation of 0 <= B <= C <= t, Q >= 0 and customer conservation."""
    t = path.t[:, None]
    v = [
        np.max(np.maximum(path.B - path.C, 0.0), initial=0.0),
        np.max(np.maximum(path.C - t, 0.0), initial=0.0),
        np.max(np.maximum(-path.B, 0.0), initial=0.0),
        np.max(np.maximum(-path.Q, 0), initial=0),
        np.max(np.maximum(-np.diff(path.B, axis=0), 0.0), initial=0.0),
        float(path.flow_violation()),
    ]
    return float(max(v))
