"""Partly linear normal model observed under current status.

``Y = theta*W + k(Z) + xi`` with ``xi ~ N(0, 1)`` is only seen through
``Delta = 1{Y <= C}``.  The regression curve ``k`` is profiled out over a
cubic B-spline sieve with ``ceil(c * n^(1/5))`` interior knots, empirically
centred, and constrained to ``J2(k) + sup|k| <= M`` by a penalty path.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline
from scipy.special import log_ndtr

from .core import DomainError, ProfileEvaluation, as_theta
from .data import PartlyLinearData

__all__ = [
    "SieveBasis",
    "SieveConvergenceError",
    "SieveOptions",
    "SplineCurve",
    "build_basis",
    "centered_sine",
    "generate_partly_linear",
    "probit_loglik",
    "sieve_objective",
    "sieve_profile",
]

DEGREE = 3
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
DECREMENT_TOL = 1e-12


class SieveConvergenceError(RuntimeError):
    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


@dataclass(frozen=True)
class SieveOptions:
    M: float = 10.0
    knot_constant: float = 2.0
    tol: float = 1e-8
    max_iter: int = 100
    support: tuple[float, float] = (0.0, 1.0)
    grid_size: int = 1000

    def __post_init__(self):
        if not (self.M > 0 and self.knot_constant > 0 and self.tol > 0 and self.max_iter >= 1):
            raise DomainError(f"invalid sieve options {self}")
        if not self.support[0] < self.support[1]:
            raise DomainError("support must be a nonempty interval")


@dataclass(frozen=True, eq=False)
class SieveBasis:
    """Cubic B-spline basis evaluated at the sample, with the exact J2 Gram matrix."""

    knots: np.ndarray          # full clamped knot vector
    interior: np.ndarray
    design: np.ndarray         # (n, p) basis values at the sample points
    penalty: np.ndarray        # (p, p) integral of B_i'' B_j''
    support: tuple[float, float]

    @property
    def dim(self) -> int:
        return self.design.shape[1]

    def evaluate(self, z) -> np.ndarray:
        p = self.dim
        return BSpline(self.knots, np.eye(p), DEGREE, extrapolate=True)(np.asarray(z, float))


def _interior_knots(z, K, support):
    lo, hi = support
    n_distinct = np.unique(z).size
    k_max = max(n_distinct - 4, 0)
    if K > k_max:
        warnings.warn(f"only {n_distinct} distinct z values; using {k_max} interior knots "
                      f"instead of {K}", stacklevel=3)
        K = k_max
    if K == 0:
        return np.empty(0)
    knots = np.quantile(z, np.arange(1, K + 1) / (K + 1))
    knots = np.unique(knots[(knots > lo) & (knots < hi)])
    if knots.size < K:
        warnings.warn(f"tied quantiles: using {knots.size} interior knots instead of {K}",
                      stacklevel=3)
    return knots


def _second_derivative_gram(t, p):
    """Exact Gram matrix of B'' (piecewise linear, so Simpson is exact per span)."""
    d2 = BSpline(t, np.eye(p), DEGREE, extrapolate=True).derivative(2)
    gram = np.zeros((p, p))
    for a, b in zip(t[:-1], t[1:]):
        h = b - a
        if h <= 0:
            continue
        vals = d2(np.array([a, 0.5 * (a + b), b]))
        wts = np.array([1.0, 4.0, 1.0]) * h / 6.0
        gram += (vals * wts[:, None]).T @ vals
    return 0.5 * (gram + gram.T)


def build_basis(z_points, options: SieveOptions | None = None) -> SieveBasis:
    options = options or SieveOptions()
    z = np.asarray(z_points, dtype=float).ravel()
    lo, hi = options.support
    if z.size == 0:
        raise DomainError("build_basis needs at least one point")
    if np.any(z < lo) or np.any(z > hi):
        raise DomainError("z points outside support")
    K = math.ceil(options.knot_constant * z.size ** 0.2)
    interior = _interior_knots(z, K, options.support)
    t = np.r_[[lo] * (DEGREE + 1), interior, [hi] * (DEGREE + 1)]
    p = t.size - DEGREE - 1
    design = BSpline(t, np.eye(p), DEGREE, extrapolate=True)(z)
    return SieveBasis(t, interior, design, _second_derivative_gram(t, p), (lo, hi))


@dataclass(frozen=True, eq=False)
class SplineCurve:
    """``k(z) = B(z) @ coefficients - centering_offset``."""

    knots: np.ndarray
    coefficients: np.ndarray
    centering_offset: float
    basis: SieveBasis

    def __call__(self, z):
        return self.basis.evaluate(z) @ self.coefficients - self.centering_offset

    def j2(self) -> float:
        beta = self.coefficients
        return math.sqrt(max(float(beta @ self.basis.penalty @ beta), 0.0))

    def sup_norm(self, grid_size: int = 1000) -> float:
        lo, hi = self.basis.support
        return float(np.max(np.abs(self(np.linspace(lo, hi, grid_size)))))


def _mills(q):
    """phi(q) / Phi(q), stable in both tails."""
    return np.exp(-0.5 * q * q - LOG_SQRT_2PI - log_ndtr(q))


def probit_loglik(q, delta) -> float:
    """Sum of ``delta log Phi(q) + (1 - delta) log(1 - Phi(q))``."""
    q = np.asarray(q, dtype=float)
    return float(np.sum(np.where(delta == 1, log_ndtr(q), log_ndtr(-q))))


def _probit_derivs(q, delta):
    ev = delta == 1
    sq = np.where(ev, q, -q)
    r = _mills(sq)
    d1 = np.where(ev, r, -r)
    d2 = -r * (sq + r)
    return d1, d2


class _SieveProblem:
    """Penalized probit objective in the reduced (centred, first column dropped) coordinates."""

    def __init__(self, theta, data: PartlyLinearData, basis: SieveBasis):
        x = basis.design[:, 1:]
        self.col_means = x.mean(axis=0)
        self.x = x - self.col_means
        self.offset = data.c - theta * data.w
        self.delta = data.delta
        n = data.n
        self.j2_gram = basis.penalty[1:, 1:]
        # the ridge on fitted values makes lam -> inf drive k to 0, not to a line
        self.omega = self.j2_gram + self.x.T @ self.x / n

    def loglik(self, beta):
        return probit_loglik(self.offset - self.x @ beta, self.delta)

    def objective(self, beta, lam):
        return self.loglik(beta) - lam * float(beta @ self.omega @ beta)

    def gradient(self, beta, lam):
        d1, _ = _probit_derivs(self.offset - self.x @ beta, self.delta)
        return -self.x.T @ d1 - 2.0 * lam * self.omega @ beta

    def hessian(self, beta, lam):
        _, d2 = _probit_derivs(self.offset - self.x @ beta, self.delta)
        return (self.x.T * d2) @ self.x - 2.0 * lam * self.omega

    def newton(self, beta, lam, tol, max_iter):
        f = self.objective(beta, lam)
        history = [f]
        for _ in range(max_iter):
            g = self.gradient(beta, lam)
            if np.max(np.abs(g), initial=0.0) <= tol:
                return beta, history, True
            h = self.hessian(beta, lam)
            step = np.linalg.lstsq(-h, g, rcond=None)[0]
            slope = float(g @ step)
            # predicted gain is below the noise of evaluating the objective
            if 0.5 * slope <= DECREMENT_TOL * (1.0 + abs(f)):
                return beta, history, True
            t = 1.0
            while t > 1e-12:
                cand = beta + t * step
                fc = self.objective(cand, lam)
                if fc >= f + 1e-4 * t * slope:
                    break
                t *= 0.5
            else:
                return beta, history, False
            beta, f = cand, fc
            history.append(f)
        return beta, history, False

    def curve(self, beta, basis):
        full = np.r_[0.0, beta]
        return SplineCurve(basis.interior, full, float(self.col_means @ beta), basis)


def _basis_for(data: PartlyLinearData, options: SieveOptions) -> SieveBasis:
    cache = data.__dict__.setdefault("_sieve_cache", {})
    if options not in cache:
        cache[options] = build_basis(data.z, options)
    return cache[options]


def sieve_objective(theta, data: PartlyLinearData, beta, lam=0.0,
                    options: SieveOptions | None = None):
    """Objective value and analytic gradient at reduced coefficients ``beta``."""
    options = options or SieveOptions()
    prob = _SieveProblem(float(as_theta(theta)[0]), data, _basis_for(data, options))
    beta = np.asarray(beta, dtype=float)
    return prob.objective(beta, lam), prob.gradient(beta, lam)


def sieve_profile(theta, data: PartlyLinearData, options: SieveOptions | None = None,
                  return_history: bool = False) -> ProfileEvaluation:
    """Profile ``k`` out of the probit current-status likelihood over the sieve."""
    options = options or SieveOptions()
    theta = as_theta(theta)
    if not isinstance(data, PartlyLinearData):
        raise DomainError("sieve_profile needs a PartlyLinearData dataset")
    if theta.shape[0] != 1:
        raise DomainError("the partly linear model has a scalar theta")
    basis = _basis_for(data, options)
    prob = _SieveProblem(float(theta[0]), data, basis)

    def fit(beta0, lam):
        beta, hist, ok = prob.newton(beta0, lam, options.tol, options.max_iter)
        if not ok:
            raise SieveConvergenceError(
                f"Newton did not converge at lambda={lam:g}", best=prob.curve(beta, basis))
        curve = prob.curve(beta, basis)
        return beta, hist, curve, curve.j2() + curve.sup_norm(options.grid_size)

    histories = {}
    beta, hist, curve, size = fit(np.zeros(prob.x.shape[1]), 0.0)
    histories[0.0] = hist
    lam = 0.0
    if size > options.M:
        lam_lo, lam_hi = 0.0, 1e-4
        best = None
        for _ in range(200):
            b, hist, c, s = fit(beta, lam_hi)
            histories[lam_hi] = hist
            if s <= options.M:
                best = (b, c, s)
                break
            lam_lo, lam_hi = lam_hi, 2.0 * lam_hi
        # k -> 0 as lam -> inf, and k = 0 satisfies the constraint
        assert best is not None, "Sobolev-ball constraint infeasible along the penalty path"
        for _ in range(60):
            if lam_hi - lam_lo <= 1e-6 * lam_hi:
                break
            mid = 0.5 * (lam_lo + lam_hi)
            b, hist, c, s = fit(best[0], mid)
            histories[mid] = hist
            if s <= options.M:
                lam_hi, best = mid, (b, c, s)
            else:
                lam_lo = mid
        beta, curve, size = best
        lam = lam_hi
    info = {"lambda": lam, "constraint": size, "dim": basis.dim}
    if return_history:
        info["histories"] = histories
    return ProfileEvaluation(prob.loglik(beta), curve, info=info)


def centered_sine(z):
    """``sin(2 pi z)``, already mean zero under ``U[0, 1]``."""
    return np.sin(2.0 * np.pi * np.asarray(z, dtype=float))


def generate_partly_linear(n: int, theta0: float, k0=centered_sine, lc: float = -2.0,
                           uc: float = 4.0, seed: int = 0) -> PartlyLinearData:
    """Simulate ``(C, 1{Y <= C}, W, Z)`` with ``W, Z ~ U[0, 1]`` and ``C ~ U[lc, uc]``."""
    if n < 1:
        raise DomainError("n must be >= 1")
    if not lc < uc:
        raise DomainError("need lc < uc")
    theta0 = float(as_theta(theta0)[0])
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.0, 1.0, size=n)
    z = rng.uniform(0.0, 1.0, size=n)
    xi = rng.standard_normal(n)
    y = theta0 * w + k0(z) + xi
    c = rng.uniform(lc, uc, size=n)
    return PartlyLinearData(c, (y <= c).astype(np.int64), w, z)
