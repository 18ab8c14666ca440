"""Registry tying each model id to its profiler, simulator and nuisance rate."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cox_current import IcmOptions, generate_current_status, icm_profile
from .cox_right import breslow_profile, generate_right_censored
from .data import CoxData, PartlyLinearData
from .partly_linear import SieveOptions, generate_partly_linear, sieve_profile

__all__ = ["MODELS", "ModelSpec", "get_model", "make_log_pl"]


@dataclass(frozen=True)
class ModelSpec:
    name: str
    rate_r: float
    data_type: type
    profile: Callable          # (theta, data, icm, sieve) -> ProfileEvaluation
    # default scaling exponents for |MLE-CM|, |SE_M-SE_N|, |L_M-L_N|, |U_M-U_N|
    scaling_exponents: tuple[float, float, float, float] | None = None


MODELS = {
    "cox_right": ModelSpec(
        "cox_right", 0.5, CoxData,
        lambda theta, data, icm, sieve: breslow_profile(theta, data),
        (1.0, 0.5, 1.0, 1.0)),
    "cox_current": ModelSpec(
        "cox_current", 1.0 / 3.0, CoxData,
        lambda theta, data, icm, sieve: icm_profile(theta, data, icm),
        (2.0 / 3.0, 1.0 / 6.0, 2.0 / 3.0, 2.0 / 3.0)),
    "partly_linear": ModelSpec(
        "partly_linear", 0.4, PartlyLinearData,
        lambda theta, data, icm, sieve: sieve_profile(theta, data, sieve)),
}

GENERATORS = {
    "cox_right": generate_right_censored,
    "cox_current": generate_current_status,
    "partly_linear": generate_partly_linear,
}


def get_model(name: str) -> ModelSpec:
    try:
        return MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None


def make_log_pl(model: str | ModelSpec, data, icm: IcmOptions | None = None,
                sieve: SieveOptions | None = None) -> Callable[[np.ndarray], float]:
    """theta -> log pl_n(theta), with overflowed evaluations mapped to ``-inf``."""
    spec = get_model(model) if isinstance(model, str) else model
    if not isinstance(data, spec.data_type):
        raise TypeError(f"model {spec.name} needs {spec.data_type.__name__}, "
                        f"got {type(data).__name__}")
    icm = icm or IcmOptions()
    sieve = sieve or SieveOptions()

    def log_pl(theta) -> float:
        return spec.profile(theta, data, icm, sieve).log_pl

    return log_pl
