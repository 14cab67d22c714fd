"""Gaussian mixture modeling with known-transformation data correction."""

from .correction import CorrectionReport, correct_dataset, estimate_expression
from .em import EmConfig, MixtureFit, e_step, initialize, m_step, run_em
from .model import (
    ComponentParams,
    Dataset,
    DegenerateFitError,
    MCDCError,
    NumericalError,
    Observation,
    Responsibilities,
    Transformation,
    apply_transform,
    gaussian_log_density,
    observed_log_likelihood,
)
from .select import Selection, bic, param_count, select_model

__version__ = "0.1.0"

__all__ = [
    "ComponentParams", "CorrectionReport", "Dataset", "DegenerateFitError", "EmConfig",
    "MCDCError", "MixtureFit", "NumericalError", "Observation", "Responsibilities",
    "Selection", "Transformation", "apply_transform", "bic", "correct_dataset", "e_step",
    "estimate_expression", "gaussian_log_density", "initialize", "m_step",
    "observed_log_likelihood", "param_count", "run_em", "select_model",
]
