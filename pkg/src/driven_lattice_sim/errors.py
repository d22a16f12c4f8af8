"""Exception types raised across the package."""


class SimError(Exception):
    """Base class for all simulation errors."""


class NonHermitianInput(SimError, ValueError):
    pass


class DegenerateSpectrum(SimError, ValueError):
    pass


class BandMatchingFailure(SimError, RuntimeError):
    pass


class GridTooCoarse(SimError, ValueError):
    pass


class LengthMismatch(SimError, ValueError):
    pass


class MismatchedTime(SimError, ValueError):
    pass


class ConfigError(SimError, ValueError):
    """Config problem tied to a line of the input (``line`` may be None)."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownKey(ConfigError):
    pass


class MissingRequired(ConfigError):
    pass


class UnitParseError(ConfigError):
    pass
