"""Shared exception types."""


class ParameterError(ValueError):
    """A caller-supplied parameter is out of its valid range."""


class InsufficientDataError(ValueError):
    """Not enough data points to perform the requested computation."""
