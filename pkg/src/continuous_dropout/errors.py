"""Exception hierarchy for continuous-dropout.

``ValidationError`` covers anything the caller can fix by changing inputs
(exit code 1 on the command line); ``NumericError`` covers failures of the
numerics themselves (exit code 2).
"""


class ContinuousDropoutError(Exception):
    """Base class for all package errors."""


class ValidationError(ContinuousDropoutError, ValueError):
    """Invalid parameters, shapes or usage."""


class MaskParameterError(ValidationError):
    """Mask distribution parameters outside their domain."""


class DimensionError(ValidationError):
    """Array shapes that do not line up."""


class UnsupportedActivationError(ValidationError):
    """An analysis was requested for an activation it is not derived for."""


class ConfigError(ValidationError):
    """Invalid training or command-line configuration."""


class SampleSizeError(ValidationError):
    """Too few Monte-Carlo samples for a meaningful estimate."""


class NoStochasticMaskError(ValidationError):
    """The requested layer sees no dropout noise."""


class IdxFormatError(ValidationError):
    """Malformed IDX container."""


class BadMagicError(IdxFormatError):
    """Unexpected IDX magic number."""


class TruncatedFileError(IdxFormatError):
    """IDX header or payload shorter than declared."""


class CountMismatchError(IdxFormatError):
    """Image and label files disagree on the number of items."""


class NumericError(ContinuousDropoutError, ArithmeticError):
    """A numerical procedure failed."""


class DivergenceError(NumericError):
    """Training loss became NaN or infinite."""


class QuadratureError(NumericError):
    """Numeric integration did not reach the requested accuracy."""


class OracleDisagreementError(NumericError):
    """A closed form disagreed with its Monte-Carlo oracle."""


class PairingError(ContinuousDropoutError):
    """Paired runs did not start from identical weights."""
