"""Exception types shared across the package."""


class PpelmError(Exception):
    """Base class for all errors raised by this package."""


class RangeOverflow(PpelmError):
    """A real value does not fit the signed fixed-point range of the ring."""


class DimensionMismatch(PpelmError):
    """Matrix or vector shapes are inconsistent with the operation."""


class ConvergenceFailure(PpelmError):
    """The SVD underlying the pseudoinverse did not converge."""


class InvalidPartyCount(PpelmError):
    """Party count outside the valid range 2..feature_count."""


class ConfigError(PpelmError):
    """Invalid run configuration."""


class ParseError(PpelmError):
    """A dataset file line could not be parsed."""

    def __init__(self, line_number, detail):
        super().__init__(f"line {line_number}: {detail}")
        self.line_number = line_number
        self.detail = detail


class EmptyFile(PpelmError):
    """Dataset file contains no instances."""


class PhaseViolation(PpelmError):
    """A protocol message arrived out of canonical order."""


class TransportFailure(PpelmError):
    """Message delivery failed; the protocol run aborts without a result."""

    def __init__(self, message, hop=None):
        super().__init__(message if hop is None else f"hop {hop}: {message}")
        self.hop = hop


class TransportTimeout(TransportFailure):
    """No frame arrived before the receive deadline."""


class ConnectionLost(TransportFailure):
    """Peer closed or refused the connection mid-exchange."""


class MalformedFrame(TransportFailure):
    """Received bytes do not form a valid frame or payload."""
