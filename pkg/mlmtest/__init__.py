from .corrections import (
    BartlettConstants,
    CorrectionIngredients,
    bartlett_C,
    bartlett_constants,
    bartlett_Cstar,
    diciccio_stern_oracle,
    ingredients,
    lawley_oracle,
    matrix_C,
    matrix_Cstar,
)
from .covariance import CovarianceModel, SigmaBundle, ar1_family, build_sigma, unstructured_family
from .cumulants import CumulantEngine, CumulantTensors, cumulant_tensors
from .data import ColumnMap, LongitudinalDataset, ModelFrame, ModelSpec, build_frame, ingest_csv
from .errors import MixedModelError
from .likelihood import (
    FitResult,
    OrthogonalizedDesign,
    adjusted_profile_loglik,
    fit_adjusted,
    fit_ml,
    fit_restricted,
    loglik,
    orthogonalize,
)
from .numutil import chisq_sf
from .simulation import SimConfig, SimResult, quantile_discrepancies, run_size_study, simulate_dataset
from .testing import TestReport, run_tests

__all__ = [
    "BartlettConstants",
    "ColumnMap",
    "CorrectionIngredients",
    "CovarianceModel",
    "CumulantEngine",
    "CumulantTensors",
    "FitResult",
    "LongitudinalDataset",
    "MixedModelError",
    "ModelFrame",
    "ModelSpec",
    "OrthogonalizedDesign",
    "SigmaBundle",
    "SimConfig",
    "SimResult",
    "TestReport",
    "adjusted_profile_loglik",
    "ar1_family",
    "bartlett_C",
    "bartlett_Cstar",
    "bartlett_constants",
    "build_frame",
    "build_sigma",
    "chisq_sf",
    "cumulant_tensors",
    "diciccio_stern_oracle",
    "fit_adjusted",
    "fit_ml",
    "fit_restricted",
    "ingest_csv",
    "ingredients",
    "lawley_oracle",
    "loglik",
    "matrix_C",
    "matrix_Cstar",
    "orthogonalize",
    "quantile_discrepancies",
    "run_size_study",
    "run_tests",
    "simulate_dataset",
    "unstructured_family",
]
