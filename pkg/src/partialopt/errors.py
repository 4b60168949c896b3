"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument is malformed or inconsistent with a model."""


class HEMParseError(InvalidInputError):
    """Malformed instance file.

    Attributes
    ----------
    line : int or None
        1-based line number where the problem was detected.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SolverError(RuntimeError):
    """An LP solve did not return an optimal solution where one was required."""

    def __init__(self, message, status=None):
        self.status = status
        super().__init__(message)


class NumericIntegralityError(RuntimeError):
    """Rounded L1 solution failed re-verification.

    Both the raw LP solution and the rounded candidate are attached so the
    caller can inspect them.
    """

    def __init__(self, message, raw=None, rounded=None):
        self.raw = raw
        self.rounded = rounded
        super().__init__(message)


class OracleCapError(InvalidInputError):
    """Brute-force enumeration refused because the labeling space is too big."""

    def __init__(self, size, cap):
        self.size = size
        self.cap = cap
        super().__init__(f"labeling space has {size} elements, cap is {cap}")
