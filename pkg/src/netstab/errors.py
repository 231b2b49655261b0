"""Exception hierarchy shared by the library and the command line."""


class NetstabError(Exception):
    """Base class for every error raised by netstab."""


class ConfigurationError(NetstabError, ValueError):
    """A parameter, gain or scenario description is invalid."""


class ConfigParseError(ConfigurationError):
    """A config document could not be parsed.

    ``lineno`` is 1-based, or ``None`` when the failure is not tied to a line.
    """

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class NumericalError(NetstabError, ArithmeticError):
    """A linear-algebra step failed, e.g. a singular innovation covariance."""

    def __init__(self, message, condition=None):
        self.condition = condition
        if condition is not None:
            message = f"{message} (condition number ~ {condition:.3e})"
        super().__init__(message)


class WarmupError(NetstabError, LookupError):
    """Not enough history has accumulated for the requested operation."""


class ProtocolError(NetstabError, RuntimeError):
    """A delay channel was used outside its one-push-per-step contract."""
