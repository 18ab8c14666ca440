"""Frequentist estimators computed from the profile likelihood and the chain.

Two routes to the efficient information are provided: discretized second
differences of ``log pl_n`` around the MLE (``info_directional``,
``info_matrix``) and the inverse posterior covariance scaled by ``n``
(``posterior_info``).  Interval estimates come from chain quantiles, from
Wald intervals, or from inverting the profile likelihood ratio.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize, stats

from .core import DomainError, Prior, RateSpec, as_theta, m_n, step_size
from .cox_current import IcmOptions
from .partly_linear import SieveOptions
from .sampler import (Chain, chain_diagnostics, derive_seed, metropolis_run,
                      tune_proposal)

__all__ = [
    "BracketError",
    "DegeneracyError",
    "FitConfig",
    "InferenceReport",
    "InfoEstimate",
    "InfoEstimateError",
    "IntervalEstimate",
    "StageError",
    "StaleMleError",
    "UnboundedIntervalError",
    "build_report",
    "credible_quantile",
    "info_directional",
    "info_matrix",
    "mle_maximize",
    "plr_interval",
    "plr_samples",
    "plr_threshold",
    "posterior_info",
    "posterior_mean",
    "wald_interval",
]

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class BracketError(ValueError):
    pass


class InfoEstimateError(ArithmeticError):
    pass


class DegeneracyError(ArithmeticError):
    pass


class StaleMleError(ValueError):
    """A chain sample has a larger log pl than the supplied maximum."""


class UnboundedIntervalError(ArithmeticError):
    def __init__(self, msg, side):
        super().__init__(msg)
        self.side = side


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True, eq=False)
class InfoEstimate:
    matrix: np.ndarray
    step: float
    method: str
    positive_definite: bool

    @classmethod
    def build(cls, matrix, step, method):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        try:
            np.linalg.cholesky(matrix)
            pd = True
        except np.linalg.LinAlgError:
            pd = False
        return cls(matrix, float(step), method, pd)


@dataclass(frozen=True)
class IntervalEstimate:
    lower: float
    upper: float
    level: float
    method: str

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise DomainError(f"interval lower {self.lower} exceeds upper {self.upper}")

    def contains(self, x) -> bool:
        return self.lower <= x <= self.upper


def _golden(f, a, b, tol):
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    pts = sorted([(a, f(a)), (c, fc), (d, fd), (b, f(b))])
    return a, b, pts


def _parabola_vertex(p1, p2, p3):
    (x1, f1), (x2, f2), (x3, f3) = p1, p2, p3
    den = (x2 - x1) * (f2 - f3) - (x2 - x3) * (f2 - f1)
    if den == 0 or not all(map(math.isfinite, (f1, f2, f3))):
        return None
    return x2 - 0.5 * ((x2 - x1) ** 2 * (f2 - f3) - (x2 - x3) ** 2 * (f2 - f1)) / den


def mle_maximize(log_pl: Callable, bracket, tol: float = 1e-6, grid: int = 21,
                 scale: float = 0.5, scalar: bool | None = None):
    """Maximize ``log_pl``.

    For scalar theta ``bracket`` is ``(lo, hi)``: a coarse grid picks the
    best cell, golden-section search narrows it to width ``tol`` and one
    parabolic step through the final points is kept if it improves.  For
    vector theta ``bracket`` is a starting point and Nelder-Mead runs from a
    simplex of size ``scale``.  ``scalar`` disambiguates a two-element
    starting point from a bracket.
    """
    bracket = np.asarray(bracket, dtype=float)
    if scalar is None:
        scalar = bracket.shape == (2,)
    if scalar:
        lo, hi = float(bracket[0]), float(bracket[1])
        if not lo < hi:
            raise BracketError(f"empty bracket ({lo}, {hi})")

        def f(x):
            v = float(log_pl(np.array([x])))
            return v if v == v else -np.inf

        xs = np.linspace(lo, hi, grid)
        fs = np.array([f(x) for x in xs])
        if not np.any(np.isfinite(fs)):
            raise BracketError(f"log_pl is not finite anywhere on [{lo}, {hi}]")
        k = int(np.argmax(fs))
        a, b = xs[max(k - 1, 0)], xs[min(k + 1, grid - 1)]
        a, b, pts = _golden(f, a, b, tol)
        best = max(pts, key=lambda p: p[1])
        i = pts.index(best)
        if 0 < i < len(pts) - 1:
            v = _parabola_vertex(pts[i - 1], pts[i], pts[i + 1])
            if v is not None and a <= v <= b:
                fv = f(v)
                if fv > best[1]:
                    best = (v, fv)
        return np.array([best[0]])

    x0 = as_theta(bracket)

    def neg(x):
        v = float(log_pl(x))
        return -v if math.isfinite(v) else np.inf

    if not math.isfinite(neg(x0)):
        raise BracketError(f"log_pl is not finite at the starting point {x0}")
    simplex = np.vstack([x0] + [x0 + scale * e for e in np.eye(x0.size)])
    res = optimize.minimize(neg, x0, method="Nelder-Mead",
                            options={"initial_simplex": simplex, "xatol": tol, "fatol": 1e-12,
                                     "maxiter": 20000 * x0.size})
    return np.asarray(res.x, dtype=float)


def _eval(log_pl, theta):
    v = float(log_pl(theta))
    if not math.isfinite(v):
        raise InfoEstimateError(f"log_pl is not finite at theta={np.asarray(theta)}")
    return v


def info_directional(log_pl: Callable, theta_hat, v, s: float, n: int) -> float:
    """``-2 [log pl(theta_hat + s v) - log pl(theta_hat)] / (n s^2)``."""
    theta_hat = as_theta(theta_hat)
    v = np.broadcast_to(np.asarray(v, dtype=float), theta_hat.shape)
    f0 = _eval(log_pl, theta_hat)
    f1 = _eval(log_pl, theta_hat + s * v)
    return -2.0 * (f1 - f0) / (n * s * s)


def info_matrix(log_pl: Callable, theta_hat, s: float, n: int) -> InfoEstimate:
    """Four-point second differences of ``log pl`` at steps ``s e_i`` and ``s e_j``."""
    theta_hat = as_theta(theta_hat)
    d = theta_hat.shape[0]
    cache = {}

    def at(*idx):
        key = tuple(sorted(idx))
        if key not in cache:
            point = theta_hat.copy()
            for i in idx:
                point[i] += s
            cache[key] = _eval(log_pl, point)
        return cache[key]

    f0 = at()
    mat = np.empty((d, d))
    denom = n * s * s
    for i in range(d):
        for j in range(i, d):
            mat[i, j] = mat[j, i] = (at(i) + at(j) - at(i, j) - f0) / denom
    return InfoEstimate.build(mat, s, "numeric")


def posterior_mean(chain: Chain) -> np.ndarray:
    return chain.samples.mean(axis=0)


def posterior_info(chain: Chain, n: int) -> InfoEstimate:
    """``(n * sample covariance of the chain)^-1``."""
    x = chain.samples
    if x.shape[0] < 2:
        raise DegeneracyError("need at least two samples for a covariance")
    cov = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    if np.any(np.diag(cov) <= 0) or np.linalg.cond(cov) > 1e12:
        raise DegeneracyError("chain covariance is singular")
    if cov.shape == (1, 1):
        mat = np.array([[1.0 / (n * cov[0, 0])]])
    else:
        mat = np.linalg.inv(n * cov)
        mat = 0.5 * (mat + mat.T)
    return InfoEstimate.build(mat, float("nan"), "mcmc")


def credible_quantile(chain: Chain, alpha: float, coord: int = 0) -> float:
    return float(np.quantile(chain.samples[:, coord], alpha))


def wald_interval(theta_hat, info: InfoEstimate, n: int, alpha: float,
                  coord: int = 0) -> IntervalEstimate:
    """``theta_hat_i -/+ z_{1-alpha/2} / sqrt(n I_ii)``."""
    theta_hat = as_theta(theta_hat)
    ii = float(info.matrix[coord, coord])
    if not ii > 0:
        raise InfoEstimateError(f"information diagonal entry {ii} is not positive")
    half = stats.norm.ppf(1.0 - alpha / 2.0) / math.sqrt(n * ii)
    method = "wald_numeric" if info.method == "numeric" else "wald_mcmc"
    c = float(theta_hat[coord])
    return IntervalEstimate(c - half, c + half, 1.0 - alpha, method)


def plr_samples(chain: Chain, log_pl_max: float, tol: float = 1e-9) -> np.ndarray:
    """Posterior draws of ``2 (log pl(theta_hat) - log pl(theta))``."""
    values = chain.log_pl_values
    excess = float(np.max(values)) - log_pl_max
    if excess > tol:
        raise StaleMleError(f"chain reaches log pl {excess:.3g} above the supplied maximum")
    return np.maximum(2.0 * (log_pl_max - values), 0.0)


def plr_threshold(plr_values, alpha: float) -> float:
    plr_values = np.asarray(plr_values, dtype=float)
    if plr_values.size == 0:
        raise DomainError("plr_threshold needs at least one value")
    return float(np.quantile(plr_values, alpha))


def plr_interval(log_pl: Callable, theta_hat, chi: float, expand_limit: int = 60,
                 step0: float = 1e-2, tol: float = 1e-8, level: float = 0.95) -> IntervalEstimate:
    """Invert ``PLR(theta) <= chi`` around a scalar ``theta_hat``.

    Assumes the profile is unimodal along each side of ``theta_hat``.
    """
    theta_hat = as_theta(theta_hat)
    if theta_hat.shape[0] != 1:
        raise DomainError("plr_interval handles scalar theta only")
    if chi < 0:
        raise DomainError("chi must be nonnegative")
    t0 = float(theta_hat[0])
    top = float(log_pl(theta_hat))
    if not math.isfinite(top):
        raise DomainError("log_pl is not finite at theta_hat")

    def excess(x):
        v = float(log_pl(np.array([x])))
        plr = 2.0 * (top - v) if math.isfinite(v) else np.inf
        return plr - chi

    ends = []
    for side, sign in (("lower", -1.0), ("upper", 1.0)):
        if chi == 0:
            ends.append(t0)
            continue
        inner, h = t0, step0
        for _ in range(expand_limit):
            outer = t0 + sign * h
            if excess(outer) > 0:
                break
            inner, h = outer, 2.0 * h
        else:
            raise UnboundedIntervalError(
                f"no PLR crossing on the {side} side within {expand_limit} doublings", side)
        while abs(outer - inner) > tol:
            mid = 0.5 * (inner + outer)
            if excess(mid) > 0:
                outer = mid
            else:
                inner = mid
        ends.append(0.5 * (inner + outer))
    return IntervalEstimate(min(ends[0], t0), max(ends[1], t0), level, "plr")


@dataclass(frozen=True)
class FitConfig:
    """Settings for one end-to-end analysis of a dataset."""

    rate_r: float | None = None          # default: the model's nuisance rate
    step_constant: float = 1.0
    chain_total: int = 5000
    burn_in: int = 2000
    seed: int = 0
    prior: Prior = Prior()
    alpha: float = 0.05
    mle_bracket: tuple[float, float] = (-10.0, 10.0)
    mle_tol: float = 1e-6
    tune_sd0: float = 1.0
    chain_interval: str = "quantile"     # or "wald": theta_hat +/- z * SE_M
    plr_calibration: str = "chisq"       # or "chi_b"
    icm: IcmOptions = IcmOptions()
    sieve: SieveOptions = SieveOptions()

    def __post_init__(self):
        if not 0 <= self.burn_in < self.chain_total:
            raise DomainError("need 0 <= burn_in < chain_total")
        if self.chain_interval not in ("quantile", "wald"):
            raise DomainError(f"unknown chain_interval {self.chain_interval!r}")
        if self.plr_calibration not in ("chisq", "chi_b"):
            raise DomainError(f"unknown plr_calibration {self.plr_calibration!r}")


@dataclass
class InferenceReport:
    model: str
    n: int
    mle: np.ndarray
    cm: np.ndarray
    se_m: np.ndarray
    se_n: np.ndarray
    intervals: list
    chi_b: float
    rate: RateSpec
    chain_meta: dict
    status: str = "success"
    flags: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def interval(self, method: str, coord: int = 0) -> IntervalEstimate | None:
        found = [iv for c, iv in self.intervals if iv.method == method and c == coord]
        return found[0] if found else None

    def bounds(self, method: str, coord: int = 0) -> tuple[float, float]:
        iv = self.interval(method, coord)
        return (iv.lower, iv.upper) if iv else (float("nan"), float("nan"))

    def to_keyvalue(self) -> str:
        """Flat ``key=value`` text; vectors are comma-joined."""
        def fmt(v):
            if isinstance(v, (list, tuple, np.ndarray)):
                return ",".join(fmt(x) for x in np.ravel(v)) if np.size(v) else ""
            if isinstance(v, (bool, np.bool_)):
                return "true" if v else "false"
            if isinstance(v, (float, np.floating)):
                return repr(float(v))
            if isinstance(v, (int, np.integer)):
                return str(int(v))
            return str(v)

        items = [("model", self.model), ("n", self.n), ("status", self.status),
                 ("flags", ";".join(self.flags)), ("rate_r", self.rate.r),
                 ("m_n", m_n(max(self.n, 1), self.rate.r)),
                 ("mle", self.mle), ("cm", self.cm), ("se_m", self.se_m), ("se_n", self.se_n),
                 ("chi_b", self.chi_b)]
        for c, iv in self.intervals:
            items.append((f"interval.{iv.method}.{c + 1}", [iv.lower, iv.upper]))
        items += [(f"chain.{k}", v) for k, v in self.chain_meta.items()]
        items += sorted(self.extra.items())
        return "".join(f"{k}={fmt(v)}\n" for k, v in items)


def build_report(model: str, data, config: FitConfig | None = None) -> InferenceReport:
    """MLE, tuned profile-sampler chain and every estimator for one dataset.

    Hard failures raise :class:`StageError` naming the stage.  Degenerate
    estimates (nonpositive information, singular chain covariance, an
    unbounded PLR set) are recorded in ``flags`` with NaN values and
    ``status = "degenerate"``.
    """
    from .models import get_model, make_log_pl

    config = config or FitConfig()
    spec = get_model(model)
    rate = RateSpec(config.rate_r if config.rate_r is not None else spec.rate_r)
    n = data.n
    log_pl = make_log_pl(spec, data, config.icm, config.sieve)
    d = data.n_covariates if hasattr(data, "n_covariates") else 1
    alpha = config.alpha
    flags = []
    extra = {}

    def stage(name, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except (StageError, KeyboardInterrupt):
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc

    start = np.zeros(d)
    if d == 1:
        mle = stage("mle", mle_maximize, log_pl, config.mle_bracket, config.mle_tol)
    else:
        mle = stage("mle", mle_maximize, log_pl, start, config.mle_tol, scalar=False)
    mle_direct = mle.copy()

    tuning = stage("tune", tune_proposal, log_pl, mle, derive_seed(config.seed, 1),
                   config.tune_sd0, config.prior, warn=False)
    if not tuning.converged:
        flags.append("tuning_cap")
    chain = stage("chain", metropolis_run, log_pl, mle, tuning.sd, config.chain_total,
                  config.burn_in, derive_seed(config.seed, 2), config.prior)

    # the chain's best draw seeds a second, local maximization
    log_pl_mle = stage("mle", log_pl, mle)
    k = int(np.argmax(chain.log_pl_values))
    chain_best = chain.samples[k].copy()
    if chain.log_pl_values[k] > log_pl_mle:
        if d == 1:
            width = max(4.0 * float(np.std(chain.samples[:, 0])), 1e-3)
            c = float(chain_best[0])
            refined = stage("mle", mle_maximize, log_pl, (c - width, c + width), config.mle_tol)
        else:
            refined = stage("mle", mle_maximize, log_pl, chain_best, config.mle_tol,
                                scalar=False)
        cands = [(log_pl_mle, mle), (stage("mle", log_pl, refined), refined),
                 (float(chain.log_pl_values[k]), chain_best)]
        log_pl_mle, mle = max(cands, key=lambda t: t[0])
        flags.append("mle_refined_from_chain")
    log_pl_max = max(log_pl_mle, float(np.max(chain.log_pl_values)))

    cm = posterior_mean(chain)
    se_m = chain.samples.std(axis=0, ddof=1)
    intervals = []
    z = stats.norm.ppf(1.0 - alpha / 2.0)
    for c in range(d):
        if config.chain_interval == "quantile":
            lo = credible_quantile(chain, alpha / 2.0, c)
            hi = credible_quantile(chain, 1.0 - alpha / 2.0, c)
            intervals.append((c, IntervalEstimate(lo, hi, 1.0 - alpha, "quantile")))
        else:
            half = z * se_m[c]
            intervals.append((c, IntervalEstimate(mle[c] - half, mle[c] + half, 1.0 - alpha,
                                                  "wald_mcmc")))

    s = step_size(n, rate, config.step_constant)
    se_n = np.full(d, np.nan)
    try:
        info = info_matrix(log_pl, mle, s, n)
        extra["info_numeric"] = info.matrix
        for c in range(d):
            try:
                iv = wald_interval(mle, info, n, alpha, c)
                intervals.append((c, iv))
                se_n[c] = 1.0 / math.sqrt(n * info.matrix[c, c])
            except InfoEstimateError:
                flags.append(f"info_nonpositive_{c + 1}")
    except InfoEstimateError as exc:
        flags.append("info_nonfinite")
        extra["info_error"] = str(exc)
    extra["step"] = s

    try:
        extra["info_mcmc"] = posterior_info(chain, n).matrix
    except DegeneracyError:
        flags.append("chain_covariance_singular")

    plr = plr_samples(chain, log_pl_max)
    chi_b = plr_threshold(plr, 1.0 - alpha)
    chi = stats.chi2.ppf(1.0 - alpha, d) if config.plr_calibration == "chisq" else chi_b
    extra["plr_chi"] = float(chi)
    if d == 1:
        try:
            intervals.append((0, stage("plr", plr_interval, log_pl, mle, chi,
                                       level=1.0 - alpha)))
        except StageError as exc:
            if isinstance(exc.cause, UnboundedIntervalError):
                flags.append(f"plr_unbounded_{exc.cause.side}")
            else:
                raise

    try:
        diag = chain_diagnostics(chain)
        chain_meta = {"accept_rate": chain.acceptance_rate,
                      "proposal_sd": chain.proposal_sd,
                      "autocorr_time": diag.autocorrelation_time,
                      "split_half": diag.split_half_discrepancy,
                      "degenerate": diag.degenerate}
        if diag.degenerate:
            flags.append("chain_degenerate")
    except Exception:
        chain_meta = {"accept_rate": chain.acceptance_rate, "proposal_sd": chain.proposal_sd}
    chain_meta.update(tuning_rounds=tuning.rounds, tuning_converged=tuning.converged,
                      total_iter=chain.total_iter, burn_in=chain.burn_in, seed=chain.seed)

    extra.update(mle_direct=mle_direct, mle_chain_best=chain_best, log_pl_max=log_pl_max)
    values = np.r_[mle, cm, se_m, se_n, chi_b]
    status = "success" if not any(f for f in flags if f != "mle_refined_from_chain") \
        and np.all(np.isfinite(values)) else "degenerate"
    return InferenceReport(spec.name, n, mle, cm, se_m, se_n, intervals, chi_b, rate,
                           chain_meta, status, flags, extra)
