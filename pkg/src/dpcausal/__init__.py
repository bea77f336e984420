"""Outlier-resistant IPW and doubly robust estimation with density-power weights."""

from ._backend import BACKEND
from .data import Dataset, DataError, DesignSpec, build_design, load_csv, validate_dataset, write_csv
from .propensity import PropensityFit, fit_logistic, predict_pi
from .outcome import OutcomeFit, OutcomePrediction, fit_dp_unnormalized, fit_gaussian_mle, predict_outcome

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DataError",
    "Dataset",
    "DesignSpec",
    "OutcomeFit",
    "OutcomePrediction",
    "PropensityFit",
    "build_design",
    "fit_dp_unnormalized",
    "fit_gaussian_mle",
    "fit_logistic",
    "load_csv",
    "predict_outcome",
    "predict_pi",
    "validate_dataset",
    "write_csv",
]
