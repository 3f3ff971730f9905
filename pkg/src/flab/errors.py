"""Exception hierarchy shared by every module."""


class FlabError(Exception):
    """Base class for all errors raised by the library."""


class ParameterError(FlabError, ValueError):
    """A parameter is outside its admissible range (non-dyadic scale, bad exponent, ...)."""


class DomainError(FlabError, ValueError):
    """The input object is outside the domain of the operation (empty set, n too small, ...)."""


class PreconditionError(FlabError, ValueError):
    """A certificate or structural precondition required by a checker is missing."""


class CertificateError(FlabError, AssertionError):
    """A post-condition asserted by a construction did not hold."""


class ProbabilisticFailure(FlabError, RuntimeError):
    """A randomized construction failed its post-hoc checks on every allowed seed."""


class ConfigError(FlabError, ValueError):
    """An experiment configuration is malformed or names an unknown experiment."""


class NormalizationError(ParameterError):
    """A line is outside the non-horizontal normalization (direction more than pi/4 from vertical)."""
