"""Profile-likelihood inference for semiparametric models via the profile sampler."""
from .core import DomainError, Prior, ProfileEvaluation, RateSpec, g_r, h_r, m_n, step_size
from .data import CoxData, PartlyLinearData, read_dataset, write_dataset
from .cox_right import breslow_profile, calibrate_tn, generate_right_censored
from .cox_current import IcmOptions, generate_current_status, icm_profile, pava
from .partly_linear import SieveOptions, generate_partly_linear, sieve_profile
from .sampler import (Chain, chain_diagnostics, derive_seed, metropolis_run, tune_proposal,
                      write_chain_csv)
from .inference import (FitConfig, InferenceReport, build_report, credible_quantile,
                        info_directional, info_matrix, mle_maximize, plr_interval, plr_samples,
                        plr_threshold, posterior_info, posterior_mean, wald_interval)
from .models import MODELS, make_log_pl
from .harness import StudyConfig, emit_csv, parse_config, run_study
from .cli import cli_main

__version__ = "0.1.0"
