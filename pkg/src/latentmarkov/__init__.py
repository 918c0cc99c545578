"""Latent Markov models for categorical longitudinal data.

Estimation by EM for four model variants (basic, covariates in the
latent process, covariates in the measurement model, mixed), decoding,
standard errors, simulation and model selection.
"""

__version__ = "0.1.0"

from .basic import BasicParams, fit_basic, n_params_basic
from .cov_latent import CovLatentParams, DiffLogitGa, fit_cov_latent, n_params_cov_latent
from .cov_manifest import CovManifestParams, fit_cov_manifest, n_params_cov_manifest
from .data import (
    CategorySpec,
    Dataset,
    LongRecord,
    LongSchema,
    collapse,
    expand,
    long2wide,
    read_long_csv,
    read_wide_csv,
    validate,
    write_wide_csv,
)
from .decoding import DecodingResult, decode, global_decode, local_decode
from .errors import ConfigError, DataError, LatentMarkovError, NumericalError, ParameterizationError
from .fitting import FitConfig, FitResult, aic, bic
from .inference import (
    SEReport,
    SelectionTable,
    bootstrap_se,
    free_param_vector,
    multistart,
    numerical_information,
    select_states,
    simulate,
    unpack_params,
)
from .mixed import MixedParams, fit_mixed, n_params_mixed
from .recursions import HmmInputs, forward_backward, forward_loglik

__all__ = [
    "BasicParams", "CategorySpec", "ConfigError", "CovLatentParams", "CovManifestParams", "DataError", "Dataset",
    "DecodingResult", "DiffLogitGa", "FitConfig", "FitResult", "HmmInputs", "LatentMarkovError", "LongRecord",
    "LongSchema", "MixedParams", "NumericalError", "ParameterizationError", "SEReport", "SelectionTable", "aic",
    "bic", "bootstrap_se", "collapse", "decode", "expand", "fit_basic", "fit_cov_latent", "fit_cov_manifest",
    "fit_mixed", "forward_backward", "forward_loglik", "free_param_vector", "global_decode", "local_decode",
    "long2wide", "multistart", "n_params_basic", "n_params_cov_latent", "n_params_cov_manifest", "n_params_mixed",
    "numerical_information", "read_long_csv", "read_wide_csv", "select_states", "simulate", "unpack_params",
    "validate", "write_wide_csv",
]
