"""Inflation-at-Risk via conditionally parametric quantile regression."""

__version__ = "0.1.0"

from .dataprep import (
    ConditioningGrid,
    DesignSet,
    ObservationFrame,
    build_design,
    compute_momentum,
    default_grid,
    load_csv,
)
from .estimators import (
    DEFAULT_TAUS,
    CoefficientCube,
    ForecastDensity,
    fit_cpqr,
    fit_cqr,
    fit_qar,
    predict_quantiles,
)
from .kernel import BandwidthSpec, cv_losses, select_bandwidth, tricube_weights
from .solver import (
    QrProblem,
    QrSolution,
    StackedQrProblem,
    solve_composite_qr,
    solve_stacked_qr,
    solve_weighted_qr,
)

__all__ = [
    "BandwidthSpec",
    "CoefficientCube",
    "ConditioningGrid",
    "DEFAULT_TAUS",
    "DesignSet",
    "ForecastDensity",
    "ObservationFrame",
    "QrProblem",
    "QrSolution",
    "StackedQrProblem",
    "build_design",
    "compute_momentum",
    "cv_losses",
    "default_grid",
    "fit_cpqr",
    "fit_cqr",
    "fit_qar",
    "load_csv",
    "predict_quantiles",
    "select_bandwidth",
    "solve_composite_qr",
    "solve_stacked_qr",
    "solve_weighted_qr",
    "tricube_weights",
]
