"""Counterfactual distribution and quantile-effect estimation with bootstrap
functional inference."""

from .conddist import METHODS, evaluate, fit_conditional
from .counterfactual import (
    AnalysisRequest,
    CounterfactualCDF,
    QECurve,
    compute_effects,
    left_inverse,
    plug_in_cdf,
    quantile_path,
)
from .data import ObservationTable, UGrid, YGrid, load_csv, make_ugrid, make_ygrid
from .inference import (
    BootstrapDraws,
    InferenceReport,
    bootstrap,
    functional_tests,
    run_inference,
    standard_errors,
    uniform_band,
)

__version__ = "0.1.0"

__all__ = [
    "AnalysisRequest",
    "BootstrapDraws",
    "CounterfactualCDF",
    "InferenceReport",
    "METHODS",
    "ObservationTable",
    "QECurve",
    "UGrid",
    "YGrid",
    "bootstrap",
    "compute_effects",
    "evaluate",
    "fit_conditional",
    "functional_tests",
    "left_inverse",
    "load_csv",
    "make_ugrid",
    "make_ygrid",
    "plug_in_cdf",
    "quantile_path",
    "run_inference",
    "standard_errors",
    "uniform_band",
]
