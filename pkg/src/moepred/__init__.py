"""Mixture-of-experts regression with debiased predictions and calibrated,
possibly multi-interval, prediction sets."""

from .model import (
    Dataset,
    MoEParams,
    component_density,
    log_likelihood,
    mixture_weights,
    responsibilities,
    sample_dataset,
)
from .em import EMConfig, FitResult, cross_validate, fit_em, q_objective
from .debias import (
    DebiasConfig,
    DebiasResult,
    debias_all,
    debias_context,
    debias_at,
    fisher_beta,
    prediction_moments,
    solve_projection_direction,
    weighted_gram,
)
from .predset import (
    PredictionSet,
    build_prediction_set,
    contains,
    default_delta,
    mixture_density,
)
from .simulate import (
    CoverageReport,
    Scenario,
    label_match,
    run_coverage,
    scenario_fig1,
    scenario_fig2,
    scenario_fig3,
    scenario_highdim,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "MoEParams",
    "component_density",
    "log_likelihood",
    "mixture_weights",
    "responsibilities",
    "sample_dataset",
    "EMConfig",
    "FitResult",
    "cross_validate",
    "fit_em",
    "q_objective",
    "DebiasConfig",
    "DebiasResult",
    "debias_all",
    "debias_context",
    "debias_at",
    "fisher_beta",
    "prediction_moments",
    "solve_projection_direction",
    "weighted_gram",
    "PredictionSet",
    "build_prediction_set",
    "contains",
    "default_delta",
    "mixture_density",
    "CoverageReport",
    "Scenario",
    "label_match",
    "run_coverage",
    "scenario_fig1",
    "scenario_fig2",
    "scenario_fig3",
    "scenario_highdim",
    "__version__",
]
