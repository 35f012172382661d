"""Multi-dimensional regenerative arrival flows.

Each family knows explicit regeneration epochs and the closed-form long-run
intensity ``lam = lim A(t)/t`` and covariance rate ``V = lim Var A(t)/t``.
``estimate_lv`` recovers both from a sample path with the regenerative
ratio estimator, which is how the closed forms are cross-checked.

All built-in families have cycle lengths and cycle increments with finite
moments of every order.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import distributions as dists
from .distributions import Distribution


class InsufficientCycles(ValueError):
    pass


@dataclass(frozen=True)
class ArrivalPath:
    """Time-ordered external arrivals on ``[0, horizon]``.

    ``times``, ``coords`` and ``batches`` are parallel arrays; simultaneous
    events are ordered by coordinate. ``regen_marks`` starts with 0.
    """

    K: int
    times: np.ndarray
    coords: np.ndarray
    batches: np.ndarray
    regen_marks: np.ndarray
    horizon: float

    def counts_at(self, t) -> np.ndarray:
        """A(t) for scalar or array ``t``; shape ``(K,)`` or ``(len(t), K)``."""
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros((tt.size, self.K), dtype=np.int64)
        for k in range(self.K):
            mask = self.coords == k
            cum = np.concatenate(([0], np.cumsum(self.batches[mask])))
            out[:, k] = cum[np.searchsorted(self.times[mask], tt, side="right")]
        return out[0] if np.ndim(t) == 0 else out

    def cycles(self) -> tuple[np.ndarray, np.ndarray]:
        """Increments ``Y_i`` (m x K) and lengths ``tau_i`` over complete cycles."""
        marks = self.regen_marks
        counts = self.counts_at(marks)
        return np.diff(counts, axis=0), np.diff(marks)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "station", "batch"])
        for t, k, b in zip(self.times, self.coords, self.batches):
            w.writerow([repr(float(t)), int(k) + 1, int(b)])
        return buf.getvalue()


def _renewal_epochs(dist: Distribution, horizon: float, rng: np.random.Generator) -> np.ndarray:
    """Epochs of an ordinary renewal process (first epoch after one full gap) on [0, horizon]."""
    chunks = []
    t = 0.0
    n = int(horizon / dist.mean + 6 * np.sqrt(horizon * dist.var) / dist.mean ** 1.5 + 16)
    while t <= horizon:
        ep = t + np.cumsum(dist.sample(rng, n))
        chunks.append(ep)
        t = ep[-1]
    ep = np.concatenate(chunks)
    return ep[ep <= horizon]


def _merge(K, parts, horizon, marks) -> ArrivalPath:
    if parts:
        times = np.concatenate([p[0] for p in parts])
        coords = np.concatenate([p[1] for p in parts]).astype(np.int64)
        batches = np.concatenate([p[2] for p in parts]).astype(np.int64)
    else:
        times = np.zeros(0)
        coords = np.zeros(0, dtype=np.int64)
        batches = np.zeros(0, dtype=np.int64)
    order = np.lexsort((coords, times))
    return ArrivalPath(K, times[order], coords[order], batches[order],
                       np.concatenate(([0.0], np.asarray(marks, dtype=float))), float(horizon))


class ArrivalSpec:
    family: str = ""
    K: int

    def analytic_lv(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def generate(self, horizon: float, rng: np.random.Generator) -> ArrivalPath:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    @property
    def lam(self) -> np.ndarray:
        return self.analytic_lv()[0]


@dataclass(frozen=True)
class IndependentRenewal(ArrivalSpec):
    """Independent ordinary renewal streams, one per station (``None`` = no arrivals).

    The joint flow has explicit regeneration epochs only when at most one
    stream is non-exponential: the epochs of that stream (or of the first
    active stream if all are Poisson) regenerate every coordinate.
    """

    interarrival: tuple
    family: str = field(default="independent-renewal", init=False)

    def __post_init__(self):
        object.__setattr__(self, "interarrival", tuple(self.interarrival))
        for d in self.interarrival:
            if d is not None and not d.mean > 0:
                raise ValueError("interarrival means must be positive")
        non_exp = [k for k, d in enumerate(self.interarrival) if d is not None and not d.is_exponential]
        if len(non_exp) > 1:
            raise ValueError(
                "independent-renewal flow with more than one non-exponential stream "
                "has no explicit regeneration epochs")

    @property
    def K(self):
        return len(self.interarrival)

    @property
    def anchor(self) -> int | None:
        active = [k for k, d in enumerate(self.interarrival) if d is not None]
        non_exp = [k for k in active if not self.interarrival[k].is_exponential]
        if non_exp:
            return non_exp[0]
        return active[0] if active else None

    def analytic_lv(self):
        lam = np.zeros(self.K)
        V = np.zeros((self.K, self.K))
        for k, d in enumerate(self.interarrival):
            if d is not None:
                lam[k] = 1.0 / d.mean
                V[k, k] = d.var / d.mean ** 3
        return lam, V

    def generate(self, horizon, rng):
        parts = []
        marks = np.zeros(0)
        for k, d in enumerate(self.interarrival):
            if d is None:
                continue
            ep = _renewal_epochs(d, horizon, rng)
            parts.append((ep, np.full(ep.size, k), np.ones(ep.size)))
            if k == self.anchor:
                marks = ep
        return _merge(self.K, parts, horizon, marks)

    def to_dict(self):
        return {"family": self.family,
                "interarrival": [None if d is None else d.to_dict() for d in self.interarrival]}


@dataclass(frozen=True)
class SharedBurstPoisson(ArrivalSpec):
    """Independent Poisson streams plus a common Poisson shock stream.

    Each shock adds ``burst[k]`` simultaneous arrivals at station ``k``, which
    makes the covariance rate non-diagonal. Every event epoch of the
    superposed Poisson process is a regeneration epoch.
    """

    rates: tuple
    burst_rate: float
    burst: tuple
    family: str = field(default="superposed-poisson-with-shared-bursts", init=False)

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(self, "burst", tuple(int(b) for b in self.burst))
        if len(self.rates) != len(self.burst):
            raise ValueError("rates and burst must have the same length")
        if min(self.rates) < 0 or self.burst_rate < 0 or min(self.burst) < 0:
            raise ValueError("rates and burst sizes must be non-negative")

    @property
    def K(self):
        return len(self.rates)

    def analytic_lv(self):
        r = np.array(self.rates)
        m = np.array(self.burst, dtype=float)
        return r + self.burst_rate * m, np.diag(r) + self.burst_rate * np.outer(m, m)

    def generate(self, horizon, rng):
        rates = np.array(self.rates + (self.burst_rate,))
        total = rates.sum()
        if total == 0:
            return _merge(self.K, [], horizon, [])
        n = rng.poisson(total * horizon)
        t = np.sort(rng.uniform(0.0, horizon, n))
        kind = rng.choice(self.K + 1, size=n, p=rates / total)
        parts = []
        solo = kind < self.K
        parts.append((t[solo], kind[solo], np.ones(solo.sum())))
        shock = t[~solo]
        for k, b in enumerate(self.burst):
            if b > 0:
                parts.append((shock, np.full(shock.size, k), np.full(shock.size, b)))
        return _merge(self.K, parts, horizon, t)

    def to_dict(self):
        return {"family": self.family, "rates": list(self.rates),
                "burst_rate": self.burst_rate, "burst": list(self.burst)}


@dataclass(frozen=True, eq=False)
class MarkovModulatedPoisson(ArrivalSpec):
    """Poisson arrivals whose rates ``rates[s, k]`` follow a CTMC with generator ``generator``.

    The chain starts in state 0 and the flow regenerates at each entry into
    state 0.
    """

    generator: np.ndarray
    rates: np.ndarray
    family: str = field(default="markov-modulated-poisson", init=False)

    def __post_init__(self):
        G = np.asarray(self.generator, dtype=float)
        L = np.asarray(self.rates, dtype=float)
        object.__setattr__(self, "generator", G)
        object.__setattr__(self, "rates", L)
        m = G.shape[0]
        if G.shape != (m, m) or L.shape[0] != m:
            raise ValueError("generator must be m x m and rates m x K")
        off = G - np.diag(np.diag(G))
        if (off < 0).any() or not np.allclose(G.sum(axis=1), 0.0, atol=1e-12):
            raise ValueError("generator needs non-negative off-diagonal entries and zero row sums")
        if (L < 0).any():
            raise ValueError("rates must be non-negative")
        if m > 1 and (np.diag(G) >= 0).any():
            raise ValueError("every modulating state must be left at positive rate")

    @property
    def K(self):
        return self.rates.shape[1]

    def stationary(self) -> np.ndarray:
        m = self.generator.shape[0]
        A = np.vstack([self.generator.T, np.ones(m)])
        rhs = np.zeros(m + 1)
        rhs[-1] = 1.0
        return np.linalg.lstsq(A, rhs, rcond=None)[0]

    def analytic_lv(self):
        G, L = self.generator, self.rates
        m = G.shape[0]
        pi = self.stationary()
        one_pi = np.outer(np.ones(m), pi)
        # deviation matrix: integral of (exp(G t) - 1 pi) dt
        dev = np.linalg.inv(one_pi - G) - one_pi
        PiD = np.diag(pi) @ dev
        lam = pi @ L
        V = np.diag(lam) + L.T @ (PiD + PiD.T) @ L
        return lam, 0.5 * (V + V.T)

    def generate(self, horizon, rng):
        G, L = self.generator, self.rates
        m = G.shape[0]
        out_rate = -np.diag(G)
        jump = np.zeros((m, m))
        for s in range(m):
            if out_rate[s] > 0:
                jump[s] = np.where(np.arange(m) == s, 0.0, G[s]) / out_rate[s]
        cum_jump = np.cumsum(jump, axis=1)
        parts, marks = [], []
        s, t = 0, 0.0
        while t < horizon:
            h = rng.exponential(1.0 / out_rate[s]) if out_rate[s] > 0 else np.inf
            end = min(t + h, horizon)
            for k in range(self.K):
                n = rng.poisson(L[s, k] * (end - t))
                if n:
                    parts.append((rng.uniform(t, end, n), np.full(n, k), np.ones(n)))
            t += h
            if t > horizon:
                break
            s = int(np.searchsorted(cum_jump[s], rng.uniform(), side="right"))
            s = min(s, m - 1)
            if s == 0:
                marks.append(t)
        return _merge(self.K, parts, horizon, marks)

    def to_dict(self):
        return {"family": self.family, "generator": self.generator.tolist(),
                "rates": self.rates.tolist()}


@dataclass(frozen=True)
class BatchRenewal(ArrivalSpec):
    """One renewal stream of epochs; each epoch brings an i.i.d. batch vector.

    ``batches`` is a sequence of ``(probability, size-vector)`` pairs.
    """

    interarrival: Distribution
    batches: tuple
    family: str = field(default="batch-renewal", init=False)

    def __post_init__(self):
        b = tuple((float(p), tuple(int(x) for x in v)) for p, v in self.batches)
        object.__setattr__(self, "batches", b)
        probs = np.array([p for p, _ in b])
        if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("batch probabilities must be non-negative and sum to 1")
        if len({len(v) for _, v in b}) != 1:
            raise ValueError("batch vectors must share one dimension")
        if any(x < 0 for _, v in b for x in v):
            raise ValueError("batch sizes must be non-negative")
        if not self.interarrival.mean > 0:
            raise ValueError("interarrival mean must be positive")

    @property
    def K(self):
        return len(self.batches[0][1])

    def _moments(self):
        probs = np.array([p for p, _ in self.batches])
        vecs = np.array([v for _, v in self.batches], dtype=float)
        EM = probs @ vecs
        cov = (vecs - EM).T @ np.diag(probs) @ (vecs - EM)
        return probs, vecs, EM, cov

    def analytic_lv(self):
        _, _, EM, cov = self._moments()
        m, s2 = self.interarrival.mean, self.interarrival.var
        return EM / m, (cov + s2 * np.outer(EM, EM) / m ** 2) / m

    def generate(self, horizon, rng):
        probs, vecs, _, _ = self._moments()
        ep = _renewal_epochs(self.interarrival, horizon, rng)
        pick = rng.choice(len(probs), size=ep.size, p=probs)
        parts = []
        for k in range(self.K):
            sizes = vecs[pick, k]
            nz = sizes > 0
            parts.append((ep[nz], np.full(nz.sum(), k), sizes[nz]))
        return _merge(self.K, parts, horizon, ep)

    def to_dict(self):
        return {"family": self.family, "interarrival": self.interarrival.to_dict(),
                "batches": [{"prob": p, "size": list(v)} for p, v in self.batches]}


def poisson(*rates: float) -> IndependentRenewal:
    """Independent Poisson streams with the given rates (0 means no arrivals)."""
    return IndependentRenewal(tuple(dists.Exponential(1.0 / r) if r > 0 else None for r in rates))


def from_dict(d: dict) -> ArrivalSpec:
    d = dict(d)
    family = d.pop("family")
    if family == "independent-renewal":
        return IndependentRenewal(tuple(None if x is None else dists.from_dict(x)
                                        for x in d["interarrival"]))
    if family == "superposed-poisson-with-shared-bursts":
        rates = d["rates"]
        return SharedBurstPoisson(rates, float(d.get("burst_rate", 0.0)),
                                  d.get("burst", [1] * len(rates)))
    if family == "markov-modulated-poisson":
        return MarkovModulatedPoisson(d["generator"], d["rates"])
    if family == "batch-renewal":
        return BatchRenewal(dists.from_dict(d["interarrival"]),
                            tuple((b["prob"], b["size"]) for b in d["batches"]))
    raise ValueError(f"unknown arrival family {family!r}")


def generate(spec: ArrivalSpec, horizon: float, rng: np.random.Generator) -> ArrivalPath:
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    return spec.generate(float(horizon), rng)


def analytic_lv(spec: ArrivalSpec) -> tuple[np.ndarray, np.ndarray]:
    return spec.analytic_lv()


@dataclass(frozen=True)
class LVEstimate:
    lam: np.ndarray
    V: np.ndarray
    lam_radius: np.ndarray
    V_radius: np.ndarray
    n_cycles: int


def estimate_lv(path: ArrivalPath, min_cycles: int = 30, level: float = 0.95) -> LVEstimate:
    """Regenerative ratio estimates of ``lam`` and ``V`` over complete cycles.

    The incomplete final cycle is discarded. Radii are normal-theory
    half-widths at the given level.
    """
    Y, tau = path.cycles()
    n = tau.size
    if n < min_cycles:
        raise InsufficientCycles(f"{n} complete regeneration cycles, need {min_cycles}")
    z = stats.norm.ppf(0.5 + level / 2)
    mtau = tau.mean()
    lam = Y.sum(axis=0) / tau.sum()
    dev = Y - np.outer(tau, lam)
    g = dev[:, :, None] * dev[:, None, :]
    V = g.mean(axis=0) / mtau
    lam_radius = z * np.sqrt(np.diag(V) / tau.sum())
    resid = g - tau[:, None, None] * V
    V_radius = z * resid.std(axis=0, ddof=1) / (np.sqrt(n) * mtau)
    return LVEstimate(lam, V, lam_radius, V_radius, n)
