"""Network description: stations, routing, arrivals and the ON/OFF environment.

A network is read from and written to a YAML file::

    stations:
      - service: {family: exponential, mean: 0.5}
        on: {family: exponential, mean: 1.0}
        off: {family: exponential, mean: 1.0}
        # optional declared moments, cross-checked by ``validate``:
        # service_rate, service_var, on_mean, on_var, off_mean, off_var
      - service: {family: deterministic, value: 0.5}
        on: {family: exponential, mean: 1.0}
        off: null            # reliable server
    routing:                 # row-major p_kj; row deficit = exit probability
      - [0.0, 1.0]
      - [0.0, 0.0]
    arrival:
      family: independent-renewal
      interarrival: [{family: exponential, mean: 1.0}, null]
    initial_queue: [0, 0]

Distribution families and their parameters are listed in
:mod:`onoffnet.distributions`; arrival families in :mod:`onoffnet.arrivals`.
"""
from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import arrivals as arr
from . import distributions as dists
from .distributions import Distribution

SPECTRAL_MARGIN = 1e-9
MOMENT_RTOL = 1e-9


@dataclass(frozen=True)
class StationSpec:
    """One single-server station with preemptive-resume breakdowns.

    ``off`` is the point mass at 0 for a reliable server. Declared moments
    default to the distribution's own moments.
    """

    service: Distribution
    on: Distribution
    off: Distribution = dists.ZERO
    service_rate: float | None = None
    service_var: float | None = None
    on_mean: float | None = None
    on_var: float | None = None
    off_mean: float | None = None
    off_var: float | None = None

    def __post_init__(self):
        defaults = {
            "service_rate": 1.0 / self.service.mean if self.service.mean > 0 else math.inf,
            "service_var": self.service.var,
            "on_mean": self.on.mean,
            "on_var": self.on.var,
            "off_mean": self.off.mean,
            "off_var": self.off.var,
        }
        for name, value in defaults.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, float(value))

    @property
    def reliable(self) -> bool:
        return self.off.is_zero

    def to_dict(self) -> dict:
        return {
            "service": self.service.to_dict(),
            "service_rate": self.service_rate,
            "service_var": self.service_var,
            "on": self.on.to_dict(),
            "on_mean": self.on_mean,
            "on_var": self.on_var,
            "off": None if self.off == dists.ZERO else self.off.to_dict(),
            "off_mean": self.off_mean,
            "off_var": self.off_var,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StationSpec":
        moments = {k: (None if d.get(k) is None else float(d[k]))
                   for k in ("service_rate", "service_var", "on_mean", "on_var", "off_mean", "off_var")}
        return cls(service=dists.from_dict(d["service"]), on=dists.from_dict(d["on"]),
                   off=dists.from_dict(d.get("off")), **moments)


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    stations: tuple
    routing: np.ndarray
    arrival: arr.ArrivalSpec
    initial_queue: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "stations", tuple(self.stations))
        P = np.array(self.routing, dtype=float, ndmin=2)
        P.setflags(write=False)
        object.__setattr__(self, "routing", P)
        q0 = (0,) * len(self.stations) if self.initial_queue is None else tuple(int(x) for x in self.initial_queue)
        object.__setattr__(self, "initial_queue", q0)

    @property
    def K(self) -> int:
        return len(self.stations)

    @property
    def mu(self) -> np.ndarray:
        return np.array([s.service_rate for s in self.stations])

    @property
    def service_var(self) -> np.ndarray:
        return np.array([s.service_var for s in self.stations])

    @property
    def lam(self) -> np.ndarray:
        return self.arrival.analytic_lv()[0]

    def to_dict(self) -> dict:
        return {
            "stations": [s.to_dict() for s in self.stations],
            "routing": self.routing.tolist(),
            "arrival": self.arrival.to_dict(),
            "initial_queue": list(self.initial_queue),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(stations=[StationSpec.from_dict(s) for s in d["stations"]],
                   routing=d["routing"], arrival=arr.from_dict(d["arrival"]),
                   initial_queue=d.get("initial_queue"))

    def dumps(self) -> str:
        return yaml.safe_dump(_plain(self.to_dict()), sort_keys=False)

    def digest(self) -> str:
        """Short hash of the canonical serialisation, stamped into output headers."""
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]


def _plain(x):
    """Replace numpy scalars and arrays by Python numbers and lists for YAML output."""
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_plain(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


class _Loader(yaml.SafeLoader):
    """Safe loader where only true/false are booleans, so ``on:``/``off:`` stay keys."""


_Loader.yaml_implicit_resolvers = {
    k: [(tag, rx) for tag, rx in v if tag != "tag:yaml.org,2002:bool"]
    for k, v in yaml.SafeLoader.yaml_implicit_resolvers.items()
}
_Loader.add_implicit_resolver("tag:yaml.org,2002:bool", re.compile(r"^(?:true|True|TRUE|false|False|FALSE)$"),
                              list("tTfF"))


def load(path) -> NetworkSpec:
    with open(path) as fh:
        return loads(fh.read())


def loads(text: str) -> NetworkSpec:
    d = yaml.load(text, Loader=_Loader)
    if not isinstance(d, dict):
        raise ValueError("network configuration must be a mapping")
    return NetworkSpec.from_dict(d)


def dump(spec: NetworkSpec, path) -> None:
    Path(path).write_text(spec.dumps())


def spectral_radius(P) -> float:
    P = np.asarray(P, dtype=float)
    if P.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(P))))


@dataclass
class ValidationReport:
    failures: list = field(default_factory=list)
    spectral_radius: float = float("nan")

    @property
    def ok(self) -> bool:
        return not self.failures

    def __bool__(self):
        return self.ok

    def __str__(self):
        head = f"spectral radius of P: {self.spectral_radius:.12g}\n"
        if self.ok:
            return head + "PASS"
        return head + "FAIL\n" + "\n".join(f"  - {f}" for f in self.failures)


def _close(x: float, y: float) -> bool:
    return abs(x - y) <= MOMENT_RTOL * max(abs(x), abs(y)) or abs(x - y) < 1e-300


def validate(spec: NetworkSpec) -> ValidationReport:
    rep = ValidationReport()
    K = spec.K
    fail = rep.failures.append
    if K < 1:
        fail("network needs at least one station")
        return rep
    P = spec.routing
    if P.shape != (K, K):
        fail(f"routing matrix has shape {P.shape}, expected ({K}, {K})")
        return rep
    if spec.arrival.K != K:
        fail(f"arrival flow has dimension {spec.arrival.K}, expected {K}")
    if len(spec.initial_queue) != K or min(spec.initial_queue) < 0:
        fail("initial_queue must hold K non-negative integers")

    for j, s in enumerate(spec.stations, start=1):
        if not (s.service_rate > 0 and math.isfinite(s.service_rate)):
            fail(f"station {j}: service rate must be positive and finite")
        if not s.on_mean > 0:
            fail(f"station {j}: mean ON time must be positive")
        if s.off_mean < 0:
            fail(f"station {j}: mean OFF time must be non-negative")
        if s.service_var < 0 or s.on_var < 0 or s.off_var < 0:
            fail(f"station {j}: variances must be non-negative")
        checks = [
            ("service_rate", s.service_rate, 1.0 / s.service.mean if s.service.mean > 0 else math.inf),
            ("service_var", s.service_var, s.service.var),
            ("on_mean", s.on_mean, s.on.mean),
            ("on_var", s.on_var, s.on.var),
            ("off_mean", s.off_mean, s.off.mean),
            ("off_var", s.off_var, s.off.var),
        ]
        for name, declared, actual in checks:
            if not _close(declared, actual):
                fail(f"station {j}: declared {name}={declared!r} but distribution gives {actual!r}")

    if (P < 0).any() or (P > 1).any():
        fail("routing probabilities must lie in [0, 1]")
    rows = P.sum(axis=1)
    for k in np.flatnonzero(rows > 1 + 1e-12):
        fail(f"routing row {k + 1} sums to {rows[k]:.12g} > 1")
    rep.spectral_radius = spectral_radius(P)
    if rep.spectral_radius >= 1 - SPECTRAL_MARGIN:
        fail(f"spectral radius of P is {rep.spectral_radius:.12g}, must be < 1")
    if spec.arrival.K == K and not (spec.lam > 0).any():
        fail("no station receives external arrivals (lambda = 0)")
    return rep


@dataclass(frozen=True, eq=False)
class EnvDerived:
    alpha: np.ndarray
    D: np.ndarray


def env_derived(spec: NetworkSpec) -> EnvDerived:
    """Long-run ON fraction and asymptotic variance rate of cumulative ON time."""
    a = np.array([s.on_mean for s in spec.stations])
    b = np.array([s.off_mean for s in spec.stations])
    s2 = np.array([s.on_var for s in spec.stations])
    d2 = np.array([s.off_var for s in spec.stations])
    cycle = a + b
    alpha = a / cycle
    D = (a ** 2 * d2 + b ** 2 * s2) / cycle ** 3
    return EnvDerived(alpha, D)


_FAMILIES = ("exponential", "erlang", "deterministic", "lognormal", "uniform")


def _random_dist(rng: np.random.Generator, mean: float, families=_FAMILIES) -> Distribution:
    fam = families[rng.integers(len(families))]
    if fam == "exponential":
        return dists.Exponential(mean)
    if fam == "erlang":
        return dists.Erlang(int(rng.integers(2, 5)), mean)
    if fam == "deterministic":
        return dists.Deterministic(mean)
    if fam == "lognormal":
        return dists.LogNormal(mean, float(rng.uniform(0.2, 2.0)) * mean ** 2)
    half = float(rng.uniform(0.1, 0.9)) * mean
    return dists.Uniform(mean - half, mean + half)


def random_routing(rng: np.random.Generator, K: int, radius: float | None = None) -> np.ndarray:
    """Random substochastic matrix with spectral radius ``radius`` (drawn if None)."""
    P = rng.uniform(size=(K, K)) * (rng.uniform(size=(K, K)) < 0.6)
    if radius is None:
        radius = float(rng.uniform(0.0, 0.9))
    r = spectral_radius(P)
    if r > 0:
        P *= radius / r
    rows = P.sum(axis=1, keepdims=True)
    P = np.where(rows > 1, P / np.maximum(rows, 1e-300) * 0.999, P)
    return P


def random_arrival(rng: np.random.Generator, K: int, scale: float = 1.0) -> arr.ArrivalSpec:
    fam = int(rng.integers(4))
    active = rng.uniform(size=K) < 0.7
    active[rng.integers(K)] = True
    rates = np.where(active, rng.uniform(0.1, 1.0, size=K), 0.0) * scale
    if fam == 0:
        odd = int(rng.integers(K))
        inter = []
        for k in range(K):
            if rates[k] == 0:
                inter.append(None)
            elif k == odd:
                inter.append(_random_dist(rng, 1.0 / rates[k]))
            else:
                inter.append(dists.Exponential(1.0 / rates[k]))
        return arr.IndependentRenewal(tuple(inter))
    if fam == 1:
        burst = (rng.uniform(size=K) < 0.5).astype(int)
        return arr.SharedBurstPoisson(tuple(rates), float(rng.uniform(0.05, 0.5) * scale), tuple(burst))
    if fam == 2:
        m = int(rng.integers(2, 4))
        G = rng.uniform(0.1, 2.0, size=(m, m))
        np.fill_diagonal(G, 0.0)
        np.fill_diagonal(G, -G.sum(axis=1))
        L = rng.uniform(0.0, 2.0, size=(m, K)) * rates
        return arr.MarkovModulatedPoisson(G, L)
    support = [(0.5, tuple(int(x) for x in rng.integers(0, 3, size=K) * active)),
               (0.5, tuple(int(x) for x in rng.integers(0, 2, size=K) * active))]
    if sum(support[0][1]) + sum(support[1][1]) == 0:
        support[0] = (0.5, tuple(int(x) for x in active))
    return arr.BatchRenewal(_random_dist(rng, float(rng.uniform(0.5, 2.0)) / scale), tuple(support))


def random_network(rng: np.random.Generator, K: int | None = None, max_K: int = 6) -> NetworkSpec:
    """Random structurally valid network, mixing every distribution and arrival family."""
    if K is None:
        K = int(rng.integers(1, max_K + 1))
    stations = []
    for _ in range(K):
        service = _random_dist(rng, float(rng.uniform(0.2, 1.5)))
        on = _random_dist(rng, float(rng.uniform(0.5, 5.0)))
        off = dists.ZERO if rng.uniform() < 0.25 else _random_dist(rng, float(rng.uniform(0.1, 2.0)))
        stations.append(StationSpec(service, on, off))
    P = random_routing(rng, K)
    q0 = rng.integers(0, 4, size=K)
    return NetworkSpec(stations, P, random_arrival(rng, K), tuple(int(x) for x in q0))
