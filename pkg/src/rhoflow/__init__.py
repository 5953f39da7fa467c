"""Copula-based normalizing flows for sensitivity analysis under unobserved confounding.

A bivariate flow maps (treatment, outcome) to latent noises whose dependence
is a Gaussian copula with a fixed correlation rho. Sweeping rho traces how the
estimated average causal effect depends on the assumed strength of hidden
confounding.
"""

from .bayes import DiscretePosterior, GridEvaluation, RhoPrior, bayesian_summary, discretize_prior, posterior_q, prior_cdf
from .causal import (
    AfBounds,
    RhoCurve,
    ace_interval,
    af_bounds,
    af_bounds_sum,
    estimate_ace,
    expected_outcomes,
    potential_outcomes,
    recover_noise,
    rho_curve,
    rho_value,
)
from .data import BINARY, CONTINUOUS, ObservationalDataset, VariableKind, load_dataset, save_dataset
from .errors import (
    DataError,
    DomainError,
    NumericError,
    RhoFlowError,
    SchemaError,
    StorageError,
    TrainingDivergedError,
    UsageError,
)
from .flow import RhoGnfModel, load_model, save_model
from .report import RunManifest, emit_plot_data
from .training import BAYES_GRID, CURVE_GRID, TrainConfig, TrainReport, fit, fit_grid

__version__ = "0.1.0"

__all__ = [
    "ace_interval",
    "af_bounds",
    "af_bounds_sum",
    "AfBounds",
    "BAYES_GRID",
    "bayesian_summary",
    "BINARY",
    "CONTINUOUS",
    "CURVE_GRID",
    "DataError",
    "DiscretePosterior",
    "discretize_prior",
    "DomainError",
    "emit_plot_data",
    "estimate_ace",
    "expected_outcomes",
    "fit",
    "fit_grid",
    "GridEvaluation",
    "load_dataset",
    "load_model",
    "NumericError",
    "ObservationalDataset",
    "posterior_q",
    "potential_outcomes",
    "prior_cdf",
    "recover_noise",
    "rho_curve",
    "rho_value",
    "RhoCurve",
    "RhoFlowError",
    "RhoGnfModel",
    "RhoPrior",
    "RunManifest",
    "save_dataset",
    "save_model",
    "SchemaError",
    "StorageError",
    "TrainConfig",
    "TrainingDivergedError",
    "TrainReport",
    "UsageError",
    "VariableKind",
]
