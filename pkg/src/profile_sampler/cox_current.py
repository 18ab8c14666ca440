"""Cox regression with current status data.

For fixed theta the log-likelihood in the cumulative hazard values
``x_i = Lambda(Y_(i))`` at the sorted examination times is

    L(x) = sum_i delta_i log(1 - exp(-c_i x_i)) - (1 - delta_i) c_i x_i,
    c_i = exp(theta'z_i),

maximized over ``0 <= x_1 <= ... <= x_n <= lambda_max``.  L is also concave
in ``u = log x``, and the order constraint is unchanged there, so the
iterative convex minorant algorithm runs on ``u``: a diagonal Newton step
projected onto the monotone cone by weighted pool-adjacent-violators,
followed by an Armijo line search.  Working in ``u`` keeps the iteration
well scaled when ``c_i`` spans many orders of magnitude.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import DomainError, ProfileEvaluation, as_theta
from .cox_right import EXP_CLAMP, MonotoneStepFunction, _event_times
from .data import CoxData

__all__ = [
    "IcmConvergenceError",
    "IcmOptions",
    "IsotonicSolution",
    "current_status_loglik",
    "generate_current_status",
    "icm_profile",
    "pava",
]

U_FLOOR = -700.0             # exp(U_FLOOR) stays a normal float
CURV_FLOOR = 1e-10
ARMIJO = 1e-4
DECREMENT_TOL = 1e-13
SNAP_CX = 1e-6


class IcmConvergenceError(RuntimeError):
    """ICM hit ``max_iter``; ``best`` holds the last (best) iterate."""

    def __init__(self, msg, best=None, residual=np.nan):
        super().__init__(msg)
        self.best = best
        self.residual = residual


@dataclass(frozen=True)
class IcmOptions:
    tol: float = 1e-8
    max_iter: int = 500
    lambda_max: float = 20.0

    def __post_init__(self):
        if not (self.tol > 0 and self.max_iter >= 1 and self.lambda_max > 0):
            raise DomainError(f"invalid ICM options {self}")


@dataclass(frozen=True, eq=False)
class IsotonicSolution:
    """Fitted ``Lambda(Y_(i))`` in sorted order; ``order[i]`` is the dataset index."""

    x: np.ndarray
    order: np.ndarray


@njit(cache=True, nogil=True)
def _pava(y, w):
    n = y.shape[0]
    means = np.empty(n)
    weights = np.empty(n)
    sizes = np.empty(n, dtype=np.int64)
    nb = 0
    for i in range(n):
        means[nb] = y[i]
        weights[nb] = w[i]
        sizes[nb] = 1
        nb += 1
        while nb > 1 and means[nb - 2] > means[nb - 1]:
            wt = weights[nb - 2] + weights[nb - 1]
            means[nb - 2] = (weights[nb - 2] * means[nb - 2]
                             + weights[nb - 1] * means[nb - 1]) / wt
            weights[nb - 2] = wt
            sizes[nb - 2] += sizes[nb - 1]
            nb -= 1
    out = np.empty(n)
    k = 0
    for b in range(nb):
        for _ in range(sizes[b]):
            out[k] = means[b]
            k += 1
    return out


def pava(values, weights=None) -> np.ndarray:
    """Weighted least-squares projection onto the nondecreasing cone."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise DomainError("pava needs a nonempty input")
    if weights is None:
        weights = np.ones_like(values)
    weights = np.asarray(weights, dtype=float).ravel()
    if weights.shape != values.shape:
        raise DomainError("values and weights must have equal lengths")
    if not np.all(weights > 0):
        raise DomainError("weights must be positive")
    return _pava(values, weights)


@njit(cache=True, nogil=True)
def _loglik(x, c, delta):
    total = 0.0
    for i in range(x.shape[0]):
        if delta[i] == 1:
            cx = c[i] * x[i]
            if cx <= 0.0:
                return -np.inf
            total += math.log(-math.expm1(-cx))
        else:
            total -= c[i] * x[i]
    return total


@njit(cache=True, nogil=True)
def _derivatives(u, c, delta, g, d):
    """Gradient and negated diagonal curvature of L in ``u = log x``."""
    for i in range(u.shape[0]):
        s = c[i] * math.exp(u[i])
        if delta[i] == 1:
            if s > EXP_CLAMP:
                g[i] = 0.0
                d[i] = CURV_FLOOR
            else:
                q = s / math.expm1(s)
                g[i] = q
                d[i] = max(q * (s / -math.expm1(-s) - 1.0), CURV_FLOOR)
        else:
            g[i] = -s
            d[i] = max(s, CURV_FLOOR)


@njit(cache=True, nogil=True)
def _block_residual(u, g, lo, hi):
    """Largest first-order gain from a feasible one-sided move of a block part."""
    n = u.shape[0]
    worst = 0.0
    a = 0
    while a < n:
        b = a
        while b + 1 < n and u[b + 1] == u[a]:
            b += 1
        v = u[a]
        if v < hi:
            s = 0.0
            for k in range(b, a - 1, -1):
                s += g[k]
                if s > worst:
                    worst = s
        if v > lo:
            s = 0.0
            for k in range(a, b + 1):
                s += g[k]
                if -s > worst:
                    worst = -s
        a = b + 1
    return worst


@njit(cache=True, nogil=True)
def _icm(c, delta, x0, lam_max, tol, max_iter):
    n = c.shape[0]
    hi = math.log(lam_max)
    u = np.empty(n)
    for i in range(n):
        u[i] = max(math.log(x0[i]), U_FLOOR)
    x = np.exp(u)
    lx = _loglik(x, c, delta)
    g = np.empty(n)
    d = np.empty(n)
    trial = np.empty(n)
    history = np.empty(max_iter + 1)
    history[0] = lx
    residual = np.inf
    for it in range(max_iter):
        _derivatives(u, c, delta, g, d)
        residual = _block_residual(u, g, U_FLOOR, hi)
        if residual <= tol:
            return u, lx, it, True, residual, history[:it + 1]
        p = _pava(u + g / d, d)
        for i in range(n):
            p[i] = min(max(p[i], U_FLOOR), hi)
        slope = 0.0
        for i in range(n):
            slope += g[i] * (p[i] - u[i])
        # predicted gain is below the rounding noise of evaluating L
        if 0.5 * slope <= DECREMENT_TOL * (1.0 + abs(lx)):
            return u, lx, it, True, residual, history[:it + 1]
        t = 1.0
        accepted = False
        for _ in range(80):
            if t == 1.0:
                trial[:] = p
            else:
                for i in range(n):
                    trial[i] = u[i] + t * (p[i] - u[i])
            lt = _loglik(np.exp(trial), c, delta)
            if lt >= lx + ARMIJO * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return u, lx, it, False, residual, history[:it + 1]
        u[:] = trial
        lx = lt
        history[it + 1] = lx
    _derivatives(u, c, delta, g, d)
    residual = _block_residual(u, g, U_FLOOR, hi)
    return u, lx, max_iter, residual <= tol, residual, history


def _to_hazard(u, c, delta, lam_max):
    """Map log-scale iterates back to ``x`` with exact bounds.

    Entries at the upper bound become ``lam_max`` exactly; a leading run of
    ``delta = 0`` points with negligible ``c x`` (where the optimum is 0) is
    set to 0, which can only raise L.
    """
    x = np.exp(u)
    x[u >= math.log(lam_max)] = lam_max
    x = np.minimum(x, lam_max)
    k = 0
    while k < x.shape[0] and delta[k] == 0 and c[k] * x[k] <= SNAP_CX:
        k += 1
    x[:k] = 0.0
    return x


def current_status_loglik(x_sorted, theta, data: CoxData) -> float:
    """Evaluate ``L(x)`` for hazard values given in sorted-``y`` order."""
    theta = as_theta(theta)
    order = data.sorted_index
    c = np.exp(data.z[order] @ theta)
    return float(_loglik(np.asarray(x_sorted, dtype=float), c, data.delta[order]))


def icm_profile(theta, data: CoxData, opts: IcmOptions | None = None,
                return_history: bool = False) -> ProfileEvaluation:
    """Profile the monotone cumulative hazard out of the current-status likelihood."""
    opts = opts or IcmOptions()
    theta = as_theta(theta)
    if not isinstance(data, CoxData):
        raise DomainError("icm_profile needs a CoxData dataset")
    if theta.shape[0] != data.n_covariates:
        raise DomainError(f"theta has dimension {theta.shape[0]}, data has "
                          f"{data.n_covariates} covariates")
    order = data.sorted_index
    eta = data.z[order] @ theta
    if np.any(eta > EXP_CLAMP):
        return ProfileEvaluation(-np.inf, None, overflow=True)
    c = np.exp(eta)
    delta = np.ascontiguousarray(data.delta[order])
    n = data.n
    x0 = np.arange(1, n + 1, dtype=float) / n
    u, lx, iters, ok, residual, history = _icm(c, delta, x0, float(opts.lambda_max),
                                                float(opts.tol), int(opts.max_iter))
    x = _to_hazard(u, c, delta, opts.lambda_max)
    lx = float(_loglik(x, c, delta))
    solution = IsotonicSolution(x, order)
    if not ok:
        raise IcmConvergenceError(
            f"ICM did not reach tol {opts.tol} in {iters} iterations at theta={theta.tolist()} "
            f"(residual {residual:.3g})",
            best=solution, residual=residual)
    y = data.y[order]
    # tied examination times: the step function takes the last (largest) value
    last = np.r_[y[1:] != y[:-1], True]
    nuisance = MonotoneStepFunction(y[last], x[last])
    info = {"iterations": int(iters), "residual": float(residual), "solution": solution}
    if return_history:
        info["history"] = history.copy()
    return ProfileEvaluation(float(lx), nuisance, info=info)


def generate_current_status(n: int, theta0, tn: float, seed: int) -> CoxData:
    """Simulate ``(Y, 1{T <= Y}, Z)`` with examination time ``Y ~ U[0, tn]``."""
    if n < 1:
        raise DomainError("n must be >= 1")
    if not tn > 0:
        raise DomainError("tn must be positive")
    rng = np.random.default_rng(seed)
    z, t = _event_times(n, theta0, rng)
    y = rng.uniform(0.0, tn, size=n)
    return CoxData(y, (t <= y).astype(np.int64), z)
