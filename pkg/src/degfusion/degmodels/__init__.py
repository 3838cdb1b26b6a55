"""Degradation-ratio model families and their shape-constrained fitting."""

from .fitting import (
    fit_curve,
    fit_exp,
    fit_explin,
    fit_isotonic,
    fit_smooth_monotonic,
)
from .isotonic import pava_decreasing
from .models import FAMILIES, FitSpec, FittedDegradationModel, evaluate
from .qp import QPResult, solve_qp

__all__ = [
    "FAMILIES",
    "FitSpec",
    "FittedDegradationModel",
    "QPResult",
    "evaluate",
    "fit_curve",
    "fit_exp",
    "fit_explin",
    "fit_isotonic",
    "fit_smooth_monotonic",
    "pava_decreasing",
    "solve_qp",
]
