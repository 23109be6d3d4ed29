"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 1, data
problems exit 2 and solver failures exit 3.
"""


class ConfigError(ValueError):
    """Bad or inconsistent run configuration (unknown key, bad value)."""


class DataError(ValueError):
    """Malformed or internally inconsistent input data."""


class GridParseError(DataError):
    """Grid file could not be parsed; the message names the offending line."""


class EmptyDataError(DataError):
    """An operation was left with no usable data points."""


class AlignmentError(ValueError):
    """Grids passed to an aligned-only operation do not share a geometry."""


class SolverError(RuntimeError):
    """A numerical solver failed to converge or hit its safety cap."""
