"""Exception hierarchy shared by every module."""


class SignalLevelError(Exception):
    """Base class for all package errors."""


class DataFormatError(SignalLevelError, ValueError):
    """Input file or array could not be interpreted as a dataset."""


class DegenerateCovarianceError(SignalLevelError, ValueError):
    """Covariance matrix is not usable for whitening."""


class DegenerateZeroEstimatorError(SignalLevelError, ValueError):
    """The requested zero-estimator is identically zero."""


class NotWhitenedError(SignalLevelError, ValueError):
    """An estimator that assumes E(X)=0, Cov(X)=I received raw covariates."""


class ConfigError(SignalLevelError, ValueError):
    """A configuration document failed validation.

    The ``field`` attribute names the offending entry when known.
    """

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field
