"""Coherent hierarchical forecasts by projection and information combination."""

from .covariance import ErrorCovariance, diagonal_cov, sample_cov, shrink_cov
from .hierarchy import (
    Hierarchy,
    HierarchyError,
    PanelMatrix,
    build_hierarchy,
    coherency_residual,
    is_coherent,
    max_coherency_violation,
)
from .penreg import CoefficientMap, ConvergenceError
from .reconcile import FittedReconciler, ReconcilerSpec, apply, fit_icomb, fit_projection

__version__ = "0.1.0"
