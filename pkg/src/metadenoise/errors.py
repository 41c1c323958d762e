"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors -> 1, DataError -> 2,
NumericError -> 3.
"""


class ShapeError(ValueError):
    """Operand shapes or channel counts are incompatible."""


class DataError(Exception):
    """Bad input data: unreadable files, invalid configs, broken checkpoints."""


class NumericError(Exception):
    """Numerical failure: NaN/Inf encountered where finite values are required."""
