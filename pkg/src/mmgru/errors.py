"""Error types shared across the package.

All three subclass ValueError so callers that do not care about the
distinction can catch one thing.
"""


class ShapeError(ValueError):
    """Operand dimensions are incompatible for the requested operation."""


class FormatError(ValueError):
    """A file or byte stream violates its declared layout."""


class DataError(ValueError):
    """Structurally valid input whose content is inconsistent."""
