"""Exception hierarchy shared across the package.

The three classes map onto the CLI exit codes: configuration problems
(bad parameters, incompatible settings) exit with 2, data problems
(malformed files, non-finite values, shape mismatches) with 3, and
numeric failures (degenerate spectra, failed decompositions) with 4.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration / parameters."""


class DataError(ValueError):
    """Malformed, incomplete, or non-finite input data."""


class NumericError(ArithmeticError):
    """A numeric procedure failed or produced a degenerate result."""
