"""Rounded stochastic-process models for count data."""

from ._kernels import backend_name
from .draws import DrawStore
from .gp import gp_fit, gp_predict
from .hier import FunctionalDataset, fit_additive_ar1, fit_grouped
from .pspline import rpspline_fit, rpspline_predict
from .rounding import (
    CountSeries,
    DomainError,
    GaussianMarginal,
    LatentSeries,
    NumericalError,
    ThresholdSequence,
    induced_cov,
    induced_mean,
    marginal_pmf,
    round_series,
    round_value,
)

__version__ = "0.1.0"
