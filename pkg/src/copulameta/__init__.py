"""Copula mixed models for bivariate meta-analysis of diagnostic accuracy."""

__version__ = "0.1.0"

from .copulas import CopulaFamily, CopulaSpec
from .likelihood import Dataset, FitOptions, FitResult, ParamVector, StudyRecord, fit_ml
from .composite import fit_cl
from .numerics import MarginSpec

__all__ = [
    "CopulaFamily",
    "CopulaSpec",
    "Dataset",
    "FitOptions",
    "FitResult",
    "MarginSpec",
    "ParamVector",
    "StudyRecord",
    "fit_cl",
    "fit_ml",
]
