"""Exception types shared across the library."""


class UnchartError(Exception):
    """Base class for all library errors."""


class DomainError(UnchartError):
    """A point (or its finite-difference stencil) lies outside a field's domain."""


class DomainExitError(DomainError):
    """A transported path left the field's domain.

    Carries the last point that was still inside as ``last_valid``.
    """

    def __init__(self, message, last_valid=None):
        super().__init__(message)
        self.last_valid = last_valid


class SingularMetricError(UnchartError):
    """The interpolated metric tensor could not be inverted."""


class SingularCovarianceError(UnchartError):
    """A cell covariance is too ill-conditioned to invert.  Names the cell."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class InvalidSegmentError(UnchartError):
    """A trajectory segment violates its construction contract."""


class InvalidFrameError(UnchartError):
    """Anchor frame is degenerate (coincident anchors or dependent increments)."""


class NoSolutionError(UnchartError):
    """The location solver failed to converge.  Carries the best residual seen."""

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class DegenerateDataError(UnchartError):
    """Input data carries no usable variation (e.g. all points identical)."""


class EmbeddingFailureError(UnchartError):
    """The spectral embedding step failed (eigensolver or closed eigengap)."""


class OutOfSupportError(UnchartError):
    """A query point lies too far from the training data to be embedded."""


class MeasurementError(UnchartError):
    """A sensor channel could not measure a world point.  Names the channel."""

    def __init__(self, message, channel=None):
        super().__init__(message)
        self.channel = channel


class StageError(UnchartError):
    """Pipeline failure wrapped with the stage that produced it."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


class ConfigError(UnchartError):
    """Malformed or out-of-range configuration."""
