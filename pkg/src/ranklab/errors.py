"""Exception types shared across the package."""


class DataError(ValueError):
    """Raised when input data violates a documented invariant."""


class ParseError(DataError):
    """Raised for malformed input rows; carries the 1-based line number."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class TrainingError(RuntimeError):
    """Raised when a training run produces non-finite values.

    Carries epoch/user context so grid runners can record the failure.
    """

    def __init__(self, message, epoch=None, user=None):
        parts = [message]
        if epoch is not None:
            parts.append(f"epoch={epoch}")
        if user is not None:
            parts.append(f"user={user}")
        super().__init__(" ".join(parts))
        self.epoch = epoch
        self.user = user


class GridError(RuntimeError):
    """Raised when a grid or learning-rate search cannot produce a result."""
