"""Cox regression with right-censored data.

The cumulative hazard is profiled in closed form: with the baseline hazard
replaced by point masses at the event times, the maximizing jump at an
event time ``t`` is ``d(t) / S(t; theta)`` where ``S`` is the risk-set sum of
``exp(theta'z)`` and ``d(t)`` the number of events at ``t`` (Breslow).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DomainError, ProfileEvaluation, as_theta
from .data import CoxData

__all__ = [
    "CalibrationError",
    "MonotoneStepFunction",
    "breslow_profile",
    "calibrate_tn",
    "event_fraction",
    "generate_right_censored",
]

EXP_CLAMP = 700.0


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class MonotoneStepFunction:
    """Right-continuous nondecreasing step function, zero before the first knot."""

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float).ravel()
        values = np.array(self.values, dtype=float).ravel()
        if knots.shape != values.shape:
            raise DomainError("knots and values must have the same length")
        if knots.size and (np.any(np.diff(knots) <= 0) or not np.all(np.isfinite(knots))):
            raise DomainError("knots must be finite and strictly increasing")
        if values.size and (values[0] < 0 or np.any(np.diff(values) < 0)):
            raise DomainError("values must be nonnegative and nondecreasing")
        knots.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side="right") - 1
        padded = np.concatenate(([0.0], self.values))
        return padded[idx + 1]

    @property
    def jumps(self) -> np.ndarray:
        return np.diff(self.values, prepend=0.0)

    @classmethod
    def zero(cls) -> MonotoneStepFunction:
        return cls(np.empty(0), np.empty(0))


def _linear_predictor(theta, z):
    eta = z @ theta
    overflow = bool(np.any(eta > EXP_CLAMP))
    if overflow:
        eta = np.minimum(eta, EXP_CLAMP)
    return eta, overflow


def breslow_profile(theta, data: CoxData) -> ProfileEvaluation:
    """Profile the cumulative hazard out of the right-censored Cox likelihood.

    Tied event times share one risk set and one jump ``d/S``; the returned
    ``log_pl`` is the supremum of the point-mass likelihood, which carries
    the extra constant ``sum d log d`` when ties are present.
    """
    theta = as_theta(theta)
    if not isinstance(data, CoxData):
        raise DomainError("breslow_profile needs a CoxData dataset")
    if theta.shape[0] != data.n_covariates:
        raise DomainError(f"theta has dimension {theta.shape[0]}, data has "
                          f"{data.n_covariates} covariates")
    n_events = int(data.delta.sum())
    if n_events == 0:
        return ProfileEvaluation(0.0, MonotoneStepFunction.zero())

    lay = data.risk_layout
    eta, overflow = _linear_predictor(theta, lay["z"])
    if overflow:
        return ProfileEvaluation(-np.inf, None, overflow=True)

    # shift for stability; log S is recovered exactly
    shift = eta.max()
    tail = np.cumsum(np.exp(eta - shift)[::-1])[::-1]
    log_s = np.log(tail[lay["risk_start"]]) + shift
    counts = lay["counts"]
    log_pl = (float(eta[lay["events"]].sum()) - float(counts @ log_s)
              + lay["tie_const"] - n_events)
    with np.errstate(over="ignore"):
        jumps = counts * np.exp(-log_s)
    times = lay["times"]
    return ProfileEvaluation(log_pl, MonotoneStepFunction(times, np.cumsum(jumps)))


def _event_times(n, theta0, rng):
    theta0 = as_theta(theta0)
    z = rng.uniform(0.0, 1.0, size=(n, theta0.shape[0]))
    e = rng.exponential(1.0, size=n)
    # inverse of Lambda0(t) = exp(t) - 1 under hazard scaling exp(theta'z)
    t = np.log1p(e * np.exp(-(z @ theta0)))
    return z, t


def generate_right_censored(n: int, theta0, tn: float, seed: int) -> CoxData:
    """Simulate ``(min(T, C), 1{T <= C}, Z)`` with ``C ~ U[0, tn]``."""
    if n < 1:
        raise DomainError("n must be >= 1")
    if not tn > 0:
        raise DomainError("tn must be positive")
    rng = np.random.default_rng(seed)
    z, t = _event_times(n, theta0, rng)
    c = rng.uniform(0.0, tn, size=n)
    return CoxData(np.minimum(t, c), (t <= c).astype(np.int64), z)


def event_fraction(theta0, tn: float, seed: int, mc_draws: int = 1_000_000) -> float:
    """Monte Carlo estimate of ``P(T <= C)`` with ``C ~ U[0, tn]``."""
    rng = np.random.default_rng(seed)
    _, t = _event_times(mc_draws, theta0, rng)
    u = rng.uniform(0.0, 1.0, size=mc_draws)
    return float(np.mean(t <= u * tn))


def calibrate_tn(theta0, target_frac: float, seed: int = 0, mc_draws: int = 1_000_000,
                 bracket: tuple[float, float] = (1e-6, 1e3), tol: float = 0.005) -> float:
    """Find ``tn`` whose Monte Carlo event fraction is within ``tol`` of ``target_frac``.

    The same uniforms are reused for every candidate (``C = U * tn``), so the
    estimated fraction is exactly nondecreasing in ``tn`` and bisection is valid.
    """
    if not 0 < target_frac < 1:
        raise DomainError("target_frac must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    _, t = _event_times(mc_draws, theta0, rng)
    u = rng.uniform(0.0, 1.0, size=mc_draws)
    # P(T <= U*tn) = P(T/U <= tn): a sorted ratio turns each fraction into a lookup
    ratio = np.sort(t / np.maximum(u, np.finfo(float).tiny))
    frac = lambda tn: np.searchsorted(ratio, tn, side="right") / mc_draws

    lo, hi = bracket
    if frac(hi) < target_frac - tol:
        raise CalibrationError(f"target fraction {target_frac} unreachable with tn <= {hi} "
                               f"(max fraction {frac(hi):.4f})")
    if frac(lo) > target_frac + tol:
        raise CalibrationError(f"target fraction {target_frac} below fraction at tn = {lo}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if frac(mid) < target_frac:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    got = frac(hi)
    if abs(got - target_frac) > tol:
        raise CalibrationError(f"could not reach {target_frac} +/- {tol} (got {got:.4f})")
    return float(hi)
