"""Exception types shared across the package.

Argument and configuration problems raise plain ``ValueError`` (or the
``CapacityError`` subclass); problems with data files raise ``DataError``.
The CLI maps ``ValueError`` to exit code 1 and ``DataError`` to exit code 2.
"""


class DataError(Exception):
    """A data file is missing, empty, or malformed."""


class ParseError(DataError):
    """A text input could not be parsed; the message names the line."""


class CapacityError(ValueError):
    """A dataset is too small for the requested episode shape."""
