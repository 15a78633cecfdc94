"""Exception types shared across the package."""


class LlmAllocError(Exception):
    """Base class for all llm-alloc errors."""


class InstanceFormatError(LlmAllocError):
    """Raised when an instance file is missing fields or violates invariants."""


class CalibrationError(LlmAllocError):
    """Raised when derived coefficients come out non-finite or mis-shaped."""


class EvaluationError(LlmAllocError):
    """Raised when a solution is structurally malformed (e.g. routing without a config)."""
