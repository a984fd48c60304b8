"""Exception hierarchy. Each family maps to a CLI exit code."""


class PostSamplingError(Exception):
    exit_code = 1


class ConfigError(PostSamplingError, ValueError):
    exit_code = 2


class DataError(PostSamplingError, ValueError):
    exit_code = 3


class NumericError(PostSamplingError, ArithmeticError):
    exit_code = 4


class IsolatedLocationError(DataError):
    """Raised when a spatial lag is requested for a row without neighbours."""

    def __init__(self, rows):
        self.rows = list(rows)
        super().__init__(f"locations without neighbours: {self.rows}")
