"""ON/OFF random environment of each server.

Each server alternates ON periods ``u_1, u_2, ...`` and OFF periods
``v_1, v_2, ...`` starting with a fresh ON period at time 0. The environment
runs independently of the queue; breakdowns happen whether or not the
server is busy.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .model import NetworkSpec


@dataclass(frozen=True, eq=False)
class StationEnv:
    """Breakdown and repair epochs of one server on ``[0, horizon]``.

    ``down[i]`` is the end of the i-th ON period and ``up[i]`` the end of the
    i-th OFF period; only epochs ``<= horizon`` are kept, so ``len(up)`` is
    ``len(down)`` or ``len(down) - 1``. ``on_total[i]`` is the ON time
    accumulated by ``down[i]``.
    """

    down: np.ndarray
    up: np.ndarray
    on_total: np.ndarray
    horizon: float

    @property
    def always_on(self) -> bool:
        return self.down.size == 0

    def switches(self) -> np.ndarray:
        """All state-change epochs in time order: down_1, up_1, down_2, ..."""
        out = np.empty(self.down.size + self.up.size)
        out[0::2] = self.down
        out[1::2] = self.up
        return out

    def cycles_completed(self, t) -> np.ndarray:
        """N_j(t): number of complete ON+OFF cycles by time t."""
        return np.searchsorted(self.up, t, side="right")

    def is_on(self, t) -> np.ndarray:
        return (np.searchsorted(self.switches(), t, side="right") % 2) == 0

    def cumulative_on(self, t) -> np.ndarray:
        """C_j(t): sum of completed ON periods plus the running one, if ON."""
        t = np.asarray(t, dtype=float)
        n = self.cycles_completed(t)
        ons = np.concatenate(([0.0], self.on_total))
        ups = np.concatenate(([0.0], self.up))
        done_on = ons[n]
        in_on = self.is_on(t)
        # ON: completed ON time plus elapsed time of the current ON period;
        # OFF: all n+1 ON periods so far are complete.
        ons_next = np.concatenate((self.on_total, [np.inf]))
        c = np.where(in_on, done_on + (t - ups[n]), ons_next[np.minimum(n, ons_next.size - 1)])
        return np.minimum(c, t)

    def intervals(self) -> list[tuple[str, float, float]]:
        """Alternating (state, start, end) tiling of ``[0, horizon]``."""
        sw = np.concatenate(([0.0], self.switches(), [self.horizon]))
        out = []
        for i in range(sw.size - 1):
            if sw[i + 1] > sw[i] or i == 0:
                out.append(("ON" if i % 2 == 0 else "OFF", float(sw[i]), float(sw[i + 1])))
        return out


@dataclass(frozen=True, eq=False)
class EnvPath:
    stations: tuple
    horizon: float

    def cumulative_on(self, j: int, t):
        if np.any(np.asarray(t) < 0) or np.any(np.asarray(t) > self.horizon):
            raise ValueError(f"t must lie in [0, {self.horizon}]")
        return self.stations[j].cumulative_on(t)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["station", "state", "start", "end"])
        for j, st in enumerate(self.stations, start=1):
            for state, a, b in st.intervals():
                w.writerow([j, state, repr(a), repr(b)])
        return buf.getvalue()


def generate_station(on, off, horizon: float, rng: np.random.Generator) -> StationEnv:
    if off.is_zero:
        e = np.zeros(0)
        return StationEnv(e, e, e, float(horizon))
    n = int(horizon / (on.mean + off.mean) * 1.2 + 16)
    u_parts, v_parts = [], []
    total = 0.0
    while total <= horizon:
        u = on.sample(rng, n)
        v = off.sample(rng, n)
        u_parts.append(u)
        v_parts.append(v)
        total += float(u.sum() + v.sum())
    u = np.concatenate(u_parts)
    v = np.concatenate(v_parts)
    cyc = np.empty(2 * u.size)
    cyc[0::2] = u
    cyc[1::2] = v
    ends = np.cumsum(cyc)
    down = ends[0::2]
    up = ends[1::2]
    on_total = np.cumsum(u)
    keep_d = down <= horizon
    keep_u = up <= horizon
    return StationEnv(down[keep_d], up[keep_u], on_total[keep_d], float(horizon))


def generate_env(spec: NetworkSpec, horizon: float, rng: np.random.Generator) -> EnvPath:
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    return EnvPath(tuple(generate_station(s.on, s.off, horizon, rng) for s in spec.stations),
                   float(horizon))


def cumulative_on(path: EnvPath, j: int, t):
    return path.cumulative_on(j, t)
