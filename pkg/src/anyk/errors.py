"""Exception types shared across the engine."""


class AnykError(Exception):
    """Base class for all engine errors."""


class IngestError(AnykError):
    """Raised when CSV ingestion hits a malformed row or a frozen dictionary miss."""


class GenerationError(AnykError):
    """Raised when a synthetic-data request is infeasible."""


class UnknownValueError(AnykError):
    """Raised when a predicate references an attribute or value with no index entry."""


class InfeasibleError(AnykError):
    """Raised when a request cannot be satisfied (e.g. no candidate blocks at all)."""


class PlanBudgetError(AnykError):
    """Raised when the IO-optimal dynamic program would exceed its cell budget.

    Callers should fall back to the hybrid planner.
    """


class QueryParseError(AnykError):
    """Raised on a malformed query string; carries the character position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class ProfileError(AnykError):
    """Raised when device profiling lacks enough samples to fit a model."""


class ValidationError(AnykError):
    """Raised when input data violates a declared constraint (e.g. duplicate primary key)."""
