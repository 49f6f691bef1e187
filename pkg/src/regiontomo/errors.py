"""Exception types shared across the package."""


class ResourceLimitError(RuntimeError):
    """Raised when a request would exceed a hard size cap (memory or outcome count)."""


class UndefinedMetricError(ValueError):
    """Raised when a metric is undefined for the given inputs (e.g. a zero denominator)."""


class UndefinedLikelihoodError(ValueError):
    """Raised when an observed outcome has zero predicted probability."""
