"""Shared types and rate utilities for profile-likelihood inference.

The rate helpers quantify how accurate profile-sampler output is expected
to be when the nuisance parameter converges at rate ``n**-r``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

__all__ = [
    "DomainError",
    "Prior",
    "ProfileEvaluation",
    "RateSpec",
    "as_theta",
    "g_r",
    "h_r",
    "m_n",
    "prior_log_density",
    "step_size",
]

LOG_2PI = math.log(2.0 * math.pi)


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


def _check_rate(n, r):
    if n < 1:
        raise DomainError(f"sample size must be >= 1, got {n}")
    if not r > 0.25:
        raise DomainError(f"rate r must exceed 1/4, got {r}")


def m_n(n: int, r: float) -> float:
    """Accuracy scale ``n^(-1/2) + n^(-2r + 1/2)``."""
    _check_rate(n, r)
    return n ** -0.5 + n ** (-2.0 * r + 0.5)


def g_r(w: float, n: int, r: float) -> float:
    """Remainder order of the quadratic expansion of log pl at distance ``w``."""
    _check_rate(n, r)
    if w < 0:
        raise DomainError(f"w must be nonnegative, got {w}")
    if r < 0.5:
        return (n * w**3 + n ** (1.0 - r) * w**2 + n ** (1.0 - 2.0 * r) * w
                + n ** (-2.0 * r + 0.5))
    return n * w**3 + n ** -0.5


def h_r(s: float, n: int, r: float) -> float:
    """Error order of the discretized information estimate at step ``s``."""
    if not s > 0:
        raise DomainError(f"step must be positive, got {s}")
    return g_r(s, n, r) / (n * s * s)


@dataclass(frozen=True)
class RateSpec:
    """Nuisance convergence rate ``r``; the exponent used for steps is truncated at 1/2."""

    r: float

    def __post_init__(self):
        if not (math.isfinite(self.r) and self.r > 0.25):
            raise DomainError(f"rate r must exceed 1/4, got {self.r}")

    @property
    def effective_exponent(self) -> float:
        return min(self.r, 0.5)


def step_size(n: int, rate: RateSpec | float, c: float = 1.0) -> float:
    """Numerical-differentiation step ``c * n^(-min(r, 1/2))``."""
    if not isinstance(rate, RateSpec):
        rate = RateSpec(float(rate))
    if n < 1:
        raise DomainError(f"sample size must be >= 1, got {n}")
    if not c > 0:
        raise DomainError(f"step constant must be positive, got {c}")
    return c * n ** -rate.effective_exponent


def as_theta(theta) -> np.ndarray:
    """Coerce to a finite 1-d float vector."""
    arr = np.atleast_1d(np.asarray(theta, dtype=float))
    if arr.ndim != 1:
        raise DomainError(f"theta must be a vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"theta has non-finite entries: {arr}")
    return arr


@dataclass(frozen=True)
class Prior:
    """Prior on theta: ``flat`` (improper, log-density 0) or independent ``gaussian``."""

    kind: str = "flat"
    mean: tuple[float, ...] = ()
    sd: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("flat", "gaussian"):
            raise DomainError(f"unknown prior kind {self.kind!r}")
        if self.kind == "gaussian":
            if len(self.mean) != len(self.sd) or not self.sd:
                raise DomainError("gaussian prior needs matching mean and sd")
            if any(not (s > 0) for s in self.sd):
                raise DomainError("gaussian prior sd entries must be > 0")

    @classmethod
    def flat(cls) -> Prior:
        return cls()

    @classmethod
    def gaussian(cls, mean, sd) -> Prior:
        mean = tuple(float(m) for m in np.atleast_1d(mean))
        sd = tuple(float(s) for s in np.atleast_1d(sd))
        if len(sd) == 1 and len(mean) > 1:
            sd = sd * len(mean)
        return cls("gaussian", mean, sd)

    @classmethod
    def parse(cls, text: str) -> Prior:
        """Parse ``flat`` or ``gaussian:MEAN:SD`` (comma-separated vectors allowed)."""
        text = text.strip()
        if text == "flat":
            return cls.flat()
        parts = text.split(":")
        if parts[0] != "gaussian" or len(parts) != 3:
            raise DomainError(f"cannot parse prior {text!r}; use 'flat' or 'gaussian:MEAN:SD'")
        mean = [float(v) for v in parts[1].split(",")]
        sd = [float(v) for v in parts[2].split(",")]
        return cls.gaussian(mean, sd)

    def __str__(self):
        if self.kind == "flat":
            return "flat"
        fmt = lambda xs: ",".join(repr(x) for x in xs)
        return f"gaussian:{fmt(self.mean)}:{fmt(self.sd)}"


def prior_log_density(prior: Prior | None, theta) -> float:
    if prior is None or prior.kind == "flat":
        return 0.0
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    mean = np.asarray(prior.mean)
    sd = np.asarray(prior.sd)
    u = (theta - mean) / sd
    return float(np.sum(-0.5 * u * u - np.log(sd) - 0.5 * LOG_2PI))


@dataclass(frozen=True)
class ProfileEvaluation:
    """Log profile likelihood at one theta plus the nuisance fit attaining it.

    ``log_pl`` is ``-inf`` when the evaluation overflowed (``overflow`` set)
    or the likelihood is zero at every admissible nuisance value.
    """

    log_pl: float
    nuisance: Any = None
    overflow: bool = False
    info: dict = field(default_factory=dict)
