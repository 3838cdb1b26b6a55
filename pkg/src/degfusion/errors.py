"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures onto its documented exit statuses without a lookup table.
"""


class DegFusionError(Exception):
    exit_code = 1


class ConfigError(DegFusionError, ValueError):
    """Invalid configuration or argument value."""

    exit_code = 2


class DataError(DegFusionError, ValueError):
    """Input data violates a precondition (ordering, positivity, length...)."""

    exit_code = 3


class AlignmentError(DataError):
    """Two sensors share fewer than two timestamps."""


class DegenerateRatioError(DataError):
    """Every ratio sample was dropped by the denominator guard."""


class NumericalError(DegFusionError, ArithmeticError):
    """A factorization, solver or optimizer failed."""

    exit_code = 4


class FitError(NumericalError):
    """Curve fit did not converge.

    ``best_params`` and ``residual`` hold the best iterate found so callers
    can inspect or fall back on it.
    """

    def __init__(self, message, best_params=None, residual=None):
        super().__init__(message)
        self.best_params = best_params
        self.residual = residual


class DegradationUnderflowError(NumericalError):
    """The degradation model is (near) zero where a correction is needed."""
