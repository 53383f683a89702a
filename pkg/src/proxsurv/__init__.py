"""Proximal causal inference for survival outcomes under additive hazards.

Two-stage estimation that corrects unmeasured-confounding bias with
negative control exposures (NCEs) and outcomes (NCOs).
"""

from .additive_hazards import AHFit, fit_additive_hazards, lin_ying_moments
from .data_model import NcoKind, NcoSpec, ProximalDataset, StepFunction, SurvivalOutcome, ingest_csv, to_csv, validate
from .exceptions import (
    ConvergenceError,
    EstimationError,
    IdentificationError,
    NoEventsError,
    ProxsurvError,
    SchemaError,
    SingularDesignError,
    ValidationError,
)
from .first_stage import FirstStageFit, fit_nco
from .inference import bootstrap_covariance, sandwich_covariance, wald_ci
from .simulation import SimConfig, oracle_fit, run_study, simulate_dataset
from .two_stage import (
    TwoStageFit,
    fully_adjusted_fit,
    naive_fit,
    p2sls_fit,
    relevance_diagnostics,
    unadjusted_fit,
)

__version__ = "0.1.0"
