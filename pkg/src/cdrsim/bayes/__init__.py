"""Bayesian inference of CDR from before/after/weathered cation concentrations."""

from .diagnostics import ess_bulk, hdi, rhat
from .model import (
    CDR_NODES,
    BayesConfig,
    BayesData,
    ModelError,
    deterministic,
    log_posterior,
    prior_predictive,
)
from .posterior import ConvergenceError, PosteriorDraws, sample_posterior, summarize, write_summary
from .sampler import adaptive_metropolis

__all__ = [
    "CDR_NODES",
    "BayesConfig",
    "BayesData",
    "ConvergenceError",
    "ModelError",
    "PosteriorDraws",
    "adaptive_metropolis",
    "deterministic",
    "ess_bulk",
    "hdi",
    "log_posterior",
    "prior_predictive",
    "rhat",
    "sample_posterior",
    "summarize",
    "write_summary",
]
