"""Exception hierarchy shared by all pipeline stages.

The CLI maps these onto exit codes: config problems exit 2, data problems
exit 3, numeric failures exit 4.
"""


class MvgWhitenError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MvgWhitenError):
    """Invalid or incomplete pipeline configuration."""


class FormatError(MvgWhitenError):
    """A file does not conform to its expected on-disk format."""


class ShapeError(MvgWhitenError):
    """An array has the wrong rank, dtype, or incompatible dimensions."""


class DataError(MvgWhitenError):
    """Array content violates an invariant (NaN/Inf, missing files, ...)."""


class NumericError(MvgWhitenError):
    """A numerical routine failed (eigendecomposition, non-finite input)."""


class MetricUndefinedError(MvgWhitenError):
    """A curve metric was requested on degenerate input (single class)."""


class DegenerateScaleError(MvgWhitenError):
    """A color scale could not be built (all-zero values)."""
