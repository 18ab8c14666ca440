"""Random-walk Metropolis over the log profile posterior.

The target is ``log pl_n(theta) + log rho(theta)``; each iteration costs one
profile evaluation because the current point's value is cached.  Random
streams come from Philox keyed by ``numpy.random.SeedSequence`` so that
replicate chains derive independent streams from one master seed.
"""
from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import DomainError, Prior, as_theta, prior_log_density

__all__ = [
    "Chain",
    "ChainDiagnostics",
    "DiagnosticsError",
    "InitializationError",
    "Tuning",
    "TuningWarning",
    "autocorrelation_time",
    "chain_diagnostics",
    "derive_seed",
    "make_rng",
    "metropolis_run",
    "tune_proposal",
    "write_chain_csv",
]


class InitializationError(ValueError):
    pass


class DiagnosticsError(ValueError):
    pass


class TuningWarning(UserWarning):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def derive_seed(master: int, *keys: int) -> int:
    """Deterministic child seed (< 2**63) for the stream indexed by ``keys``."""
    lo, hi = np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(2)
    return (int(hi) & 0x7FFFFFFF) << 32 | int(lo)


@dataclass(frozen=True, eq=False)
class Chain:
    samples: np.ndarray          # (total_iter - burn_in, d)
    log_pl_values: np.ndarray
    acceptance_rate: float
    accepted: int
    proposal_sd: np.ndarray
    seed: int
    burn_in: int
    total_iter: int
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]

    @classmethod
    def from_samples(cls, samples, log_pl_values=None, **kw) -> Chain:
        """Wrap externally produced draws, e.g. iid pseudo-chains in tests."""
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        m = samples.shape[0]
        if log_pl_values is None:
            log_pl_values = np.zeros(m)
        defaults = dict(acceptance_rate=1.0, accepted=m, proposal_sd=np.zeros(samples.shape[1]),
                        seed=0, burn_in=0, total_iter=m)
        defaults.update(kw)
        return cls(samples, np.asarray(log_pl_values, dtype=float), **defaults)


def metropolis_run(log_pl: Callable, theta_init, proposal_sd, total_iter: int, burn_in: int,
                   seed: int, prior: Prior | None = None) -> Chain:
    """Run a Gaussian random-walk Metropolis chain.

    Parameters
    ----------
    log_pl : callable
        theta -> log profile likelihood (``-inf`` allowed; such proposals are rejected).
    theta_init : array_like
        Starting point; the target must be finite there.
    proposal_sd : array_like
        Per-coordinate standard deviations of the Gaussian increment.
    total_iter, burn_in : int
        Chain length and number of leading iterations discarded.
    seed : int
        Seed of the Philox stream.
    prior : Prior, optional
        Defaults to the flat prior.

    Returns
    -------
    Chain
        Retained samples together with their log profile likelihoods.
    """
    theta = as_theta(theta_init).copy()
    d = theta.shape[0]
    sd = np.broadcast_to(np.asarray(proposal_sd, dtype=float), (d,)).copy()
    if np.any(sd < 0) or not np.all(np.isfinite(sd)):
        raise DomainError("proposal_sd must be finite and nonnegative")
    if not 0 <= burn_in < total_iter:
        raise DomainError("need 0 <= burn_in < total_iter")

    cur_pl = float(log_pl(theta))
    cur = cur_pl + prior_log_density(prior, theta)
    if not math.isfinite(cur):
        raise InitializationError(f"log target is not finite at theta_init={theta}")

    rng = make_rng(seed)
    steps = rng.standard_normal((total_iter, d)) * sd
    log_u = np.log(rng.random(total_iter))

    keep = total_iter - burn_in
    samples = np.empty((keep, d))
    values = np.empty(keep)
    accepted = 0
    for i in range(total_iter):
        prop = theta + steps[i]
        prop_pl = float(log_pl(prop))
        prop_t = prop_pl + prior_log_density(prior, prop) if prop_pl > -np.inf else -np.inf
        if prop_t > -np.inf and log_u[i] < prop_t - cur:
            theta, cur, cur_pl = prop, prop_t, prop_pl
            accepted += 1
        if i >= burn_in:
            samples[i - burn_in] = theta
            values[i - burn_in] = cur_pl
    return Chain(samples, values, accepted / total_iter, accepted, sd, int(seed), burn_in,
                 total_iter)


@dataclass(frozen=True)
class Tuning:
    sd: np.ndarray
    acceptance: float
    rounds: int
    converged: bool
    history: tuple = ()
    warning: str | None = None


def tune_proposal(log_pl: Callable, theta_init, seed: int, sd0=1.0, prior: Prior | None = None,
                  pilot_iter: int = 500, max_rounds: int = 30,
                  target: tuple[float, float] = (0.2, 0.4), warn: bool = True) -> Tuning:
    """Pilot-run doubling/halving of the proposal scale until acceptance lies in ``target``.

    Each pilot continues from where the previous one stopped.  If ``max_rounds``
    pilots pass without success the last scale is returned with a warning
    (``warn=False`` leaves it to the caller to inspect ``converged``).
    """
    theta = as_theta(theta_init)
    sd = np.broadcast_to(np.asarray(sd0, dtype=float), theta.shape).copy()
    lo, hi = target
    history = []
    acc = float("nan")
    for k in range(max_rounds):
        pilot = metropolis_run(log_pl, theta, sd, pilot_iter, 0, derive_seed(seed, k), prior)
        acc = pilot.acceptance_rate
        history.append((float(sd[0]), acc))
        if lo <= acc <= hi:
            return Tuning(sd, acc, k + 1, True, tuple(history))
        theta = pilot.samples[-1]
        sd = sd * 2.0 if acc > hi else sd * 0.5
    # report the scale that produced the last observed acceptance
    sd = sd * 0.5 if acc > hi else sd * 2.0
    msg = f"proposal tuning did not reach acceptance in {target} after {max_rounds} pilots"
    if warn:
        warnings.warn(msg, TuningWarning, stacklevel=2)
    return Tuning(sd, acc, max_rounds, False, tuple(history), msg)


def autocorrelation_time(x) -> float:
    """Integrated autocorrelation time by Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=float)
    m = x.shape[0]
    xc = x - x.mean()
    var = float(xc @ xc) / m
    if var == 0.0:
        return float("nan")
    nfft = 1 << (2 * m - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:m] / m
    rho = acov / acov[0]
    tau = -1.0
    for k in range(0, m - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return max(tau, 1.0 / m)


@dataclass(frozen=True)
class ChainDiagnostics:
    acceptance_rate: float
    mean: np.ndarray
    sd: np.ndarray
    autocorrelation_time: np.ndarray
    split_half_discrepancy: np.ndarray
    degenerate: bool


def chain_diagnostics(chain: Chain) -> ChainDiagnostics:
    x = chain.samples
    m = x.shape[0]
    if m < 10:
        raise DiagnosticsError(f"chain of length {m} is too short for diagnostics (need 10)")
    mean = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    tau = np.array([autocorrelation_time(x[:, j]) for j in range(x.shape[1])])
    half = m // 2
    a, b = x[:half], x[half:]
    se = np.sqrt(tau * (a.var(axis=0, ddof=1) / a.shape[0] + b.var(axis=0, ddof=1) / b.shape[0]))
    with np.errstate(divide="ignore", invalid="ignore"):
        split = np.abs(a.mean(axis=0) - b.mean(axis=0)) / se
    degenerate = bool(np.any(sd == 0))
    return ChainDiagnostics(chain.acceptance_rate, mean, sd, tau, split, degenerate)


def write_chain_csv(chain: Chain, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter"] + [f"theta{j + 1}" for j in range(chain.dim)] + ["log_pl"])
        for i, (theta, lp) in enumerate(zip(chain.samples, chain.log_pl_values)):
            writer.writerow([chain.burn_in + i + 1] + [repr(float(v)) for v in theta]
                            + [repr(float(lp))])
