"""Positive random variables with closed-form first two moments.

Every family used for service, ON and OFF periods and renewal interarrival
times lives here. Each class knows its mean and variance exactly, so the
moments declared in a configuration file can be cross-checked against the
distribution parameters.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import ClassVar

import numpy as np


class Distribution:
    family: ClassVar[str] = ""

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def var(self) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    @property
    def is_exponential(self) -> bool:
        return False

    @property
    def is_zero(self) -> bool:
        """True for the point mass at 0 (used for a server that never breaks)."""
        return False

    def to_dict(self) -> dict:
        return {"family": self.family, **asdict(self)}


@dataclass(frozen=True)
class Exponential(Distribution):
    mean_: float
    family: ClassVar[str] = "exponential"

    def __post_init__(self):
        if not self.mean_ > 0:
            raise ValueError(f"exponential mean must be positive, got {self.mean_}")

    @property
    def mean(self) -> float:
        return self.mean_

    @property
    def var(self) -> float:
        return self.mean_ ** 2

    @property
    def is_exponential(self) -> bool:
        return True

    def sample(self, rng, size):
        return rng.exponential(self.mean_, size)

    def to_dict(self):
        return {"family": self.family, "mean": self.mean_}


@dataclass(frozen=True)
class Erlang(Distribution):
    k: int
    mean_: float
    family: ClassVar[str] = "erlang"

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"erlang shape must be a positive integer, got {self.k}")
        if not self.mean_ > 0:
            raise ValueError(f"erlang mean must be positive, got {self.mean_}")

    @property
    def mean(self):
        return self.mean_

    @property
    def var(self):
        return self.mean_ ** 2 / self.k

    @property
    def is_exponential(self):
        return self.k == 1

    def sample(self, rng, size):
        return rng.gamma(self.k, self.mean_ / self.k, size)

    def to_dict(self):
        return {"family": self.family, "k": int(self.k), "mean": self.mean_}


@dataclass(frozen=True)
class Deterministic(Distribution):
    value: float
    family: ClassVar[str] = "deterministic"

    def __post_init__(self):
        if self.value < 0:
            raise ValueError(f"deterministic value must be non-negative, got {self.value}")

    @property
    def mean(self):
        return self.value

    @property
    def var(self):
        return 0.0

    @property
    def is_zero(self):
        return self.value == 0

    def sample(self, rng, size):
        return np.full(size, float(self.value))


@dataclass(frozen=True)
class LogNormal(Distribution):
    """Lognormal parameterised by its own mean and variance."""

    mean_: float
    var_: float
    family: ClassVar[str] = "lognormal"

    def __post_init__(self):
        if not self.mean_ > 0 or self.var_ < 0:
            raise ValueError("lognormal needs mean > 0 and var >= 0")

    @property
    def mean(self):
        return self.mean_

    @property
    def var(self):
        return self.var_

    def sample(self, rng, size):
        s2 = math.log1p(self.var_ / self.mean_ ** 2)
        m = math.log(self.mean_) - 0.5 * s2
        return rng.lognormal(m, math.sqrt(s2), size)

    def to_dict(self):
        return {"family": self.family, "mean": self.mean_, "var": self.var_}


@dataclass(frozen=True)
class Uniform(Distribution):
    low: float
    high: float
    family: ClassVar[str] = "uniform"

    def __post_init__(self):
        if not 0 <= self.low <= self.high:
            raise ValueError("uniform needs 0 <= low <= high")

    @property
    def mean(self):
        return 0.5 * (self.low + self.high)

    @property
    def var(self):
        return (self.high - self.low) ** 2 / 12.0

    @property
    def is_zero(self):
        return self.high == 0

    def sample(self, rng, size):
        return rng.uniform(self.low, self.high, size)


ZERO = Deterministic(0.0)


def from_dict(d: dict | None) -> Distribution:
    """Build a distribution from its config mapping; ``None`` is the point mass at 0."""
    if d is None:
        return ZERO
    d = dict(d)
    family = d.pop("family", None)
    if family == "exponential":
        return Exponential(float(d["mean"]))
    if family == "erlang":
        return Erlang(int(d["k"]), float(d["mean"]))
    if family == "deterministic":
        return Deterministic(float(d["value"]))
    if family == "lognormal":
        return LogNormal(float(d["mean"]), float(d["var"]))
    if family == "uniform":
        return Uniform(float(d["low"]), float(d["high"]))
    raise ValueError(f"unknown distribution family {family!r}")
