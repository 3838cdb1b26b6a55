"""Learn multiplicative sensor degradation from a redundant sensor pair and
fuse the corrected signals with exact or sparse Gaussian processes."""

__version__ = "0.1.0"

from .core import (
    AlignedPair,
    ExposureSeries,
    RatioSeries,
    TimeSeries,
    align,
    compute_exposure,
    ratio,
    relative_change,
)
from .correction import (
    CorrectionConfig,
    CorrectionResult,
    IterationRecord,
    apply_correction,
    correct,
    correct_both,
    correct_one,
)
from .errors import (
    AlignmentError,
    ConfigError,
    DataError,
    DegenerateRatioError,
    DegFusionError,
    DegradationUnderflowError,
    FitError,
    NumericalError,
)

__all__ = [
    "AlignedPair",
    "AlignmentError",
    "ConfigError",
    "CorrectionConfig",
    "CorrectionResult",
    "DataError",
    "DegFusionError",
    "DegenerateRatioError",
    "DegradationUnderflowError",
    "ExposureSeries",
    "FitError",
    "IterationRecord",
    "NumericalError",
    "RatioSeries",
    "TimeSeries",
    "align",
    "apply_correction",
    "compute_exposure",
    "correct",
    "correct_both",
    "correct_one",
    "ratio",
    "relative_change",
]
