"""Exception hierarchy shared across the package."""


class PPNormError(Exception):
    """Base class for all errors raised by ppnorm."""


class ConfigError(PPNormError, ValueError):
    pass


class DimensionError(PPNormError, ValueError):
    pass


class DegenerateInputError(PPNormError, ValueError):
    pass


class DegenerateStatsError(PPNormError, ValueError):
    """Cohort statistics with zero spread; carries the offending id when known."""

    def __init__(self, message, sample_id=None):
        super().__init__(message if sample_id is None else f"{message} (id={sample_id})")
        self.sample_id = sample_id


class ModelError(PPNormError, ValueError):
    pass


class KeyMismatchError(PPNormError, ValueError):
    pass


class OverflowRiskError(PPNormError, ArithmeticError):
    pass


class PrimeGenerationError(PPNormError, RuntimeError):
    pass


class ProtocolError(PPNormError, RuntimeError):
    pass


class TripleExhaustedError(ProtocolError):
    pass


class ChannelClosedError(ProtocolError):
    pass


class FormatError(PPNormError, ValueError):
    """Malformed container or text file."""
