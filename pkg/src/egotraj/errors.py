"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class EgoTrajError(Exception):
    exit_code = 1


class InputError(EgoTrajError):
    """Bad or missing input data (files, frame ranges, dimensions)."""

    exit_code = 2


class ConfigError(EgoTrajError):
    exit_code = 3


class NumericalError(EgoTrajError):
    """A solver failed or produced non-finite values."""

    exit_code = 4
