"""Exception types shared across the package."""


class NumericError(RuntimeError):
    """A numerical routine failed to converge or produced non-finite values."""


class DegenerateInputError(ValueError):
    """Input is in a degenerate configuration the operation cannot handle."""


class FormatError(ValueError):
    """A binary file does not conform to its declared format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
