"""Exception types shared across the package.

The CLI maps ``DataError`` to exit code 2 and ``NumericalError`` to exit code 3.
"""


class CfpiError(Exception):
    pass


class DataError(CfpiError, ValueError):
    pass


class DimensionError(DataError):
    pass


class TruncatedDatasetError(DataError):
    pass


class NumericalError(CfpiError, ArithmeticError):
    pass


class InfeasibleError(NumericalError):
    pass


class DegenerateFilterError(CfpiError, ValueError):
    """Every mixture weight fell at or below the filter threshold."""
