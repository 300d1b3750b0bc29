class EBError(Exception):
    exit_code = 5


class ConfigError(EBError, ValueError):
    exit_code = 2


class DataError(EBError, ValueError):
    exit_code = 3


class ConvergenceError(EBError):
    exit_code = 4


class GridError(ConfigError):
    """Inadmissible or degenerate grid specification."""
