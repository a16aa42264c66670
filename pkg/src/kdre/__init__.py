"""Kernel density-ratio estimation and Hessian conditioning experiments."""

from .estimators import (
    KULLBACK_LEIBLER,
    SQUARED,
    DomainError,
    PsiSpec,
    RatioModel,
    fit_kulsif,
    kulsif_fit_direct,
)
from .kernelcore import GramBlocks, InputError, KernelSpec, SingularMatrixError, gram_blocks, median_heuristic
from .modelsel import grid_select, loocv_analytic

__all__ = [
    "KULLBACK_LEIBLER",
    "SQUARED",
    "DomainError",
    "GramBlocks",
    "InputError",
    "KernelSpec",
    "PsiSpec",
    "RatioModel",
    "SingularMatrixError",
    "fit_kulsif",
    "grid_select",
    "gram_blocks",
    "kulsif_fit_direct",
    "loocv_analytic",
    "median_heuristic",
]
