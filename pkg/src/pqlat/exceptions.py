"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A parameter is outside its admissible domain."""


class DegenerateRatesError(ParameterError):
    """Hypoexponential rates are too close to each other for the closed form."""


class InstabilityError(ParameterError):
    """Queue utilization is at or above one."""


class ConvergenceError(RuntimeError):
    """A numerical refinement did not reach its tolerance."""


class SampleSizeError(ValueError):
    """Too few samples for the requested statistic."""


class SchemaError(ValueError):
    """Input data or configuration does not follow the expected schema."""


class RecordValidationError(ValueError):
    """A record field is out of range.

    ``row`` is the zero-based data row (header excluded) and ``field`` the
    offending column.
    """

    def __init__(self, message, row=None, field=None):
        super().__init__(message)
        self.row = row
        self.field = field


class TrainingError(RuntimeError):
    """Model training diverged or could not proceed."""
