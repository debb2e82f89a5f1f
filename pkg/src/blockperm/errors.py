"""Exception taxonomy shared across the package.

Exit-code mapping used by the CLI: ValidationError -> 2, CapacityError -> 3,
DegenerateDesignError / NumericalDegeneracyError -> 4.
"""


class BlockPermError(Exception):
    """Base class for all package errors."""


class ValidationError(BlockPermError):
    """Malformed or inadmissible input (bad matrix, bad CSV, bad threshold)."""


class CapacityError(BlockPermError):
    """Requested computation exceeds the desk-scale guards (k!, (k!)^b)."""


class DegenerateDesignError(BlockPermError):
    """Tied or constant data collapse the admissible polytope."""


class NumericalDegeneracyError(BlockPermError):
    """A quantity that is provably nonzero fell below machine resolution."""


class DomainError(BlockPermError):
    """Saddlepoint solve requested at a point that is not strictly interior."""


class NearBoundaryError(BlockPermError):
    """Newton iteration cap exceeded: the target sits within solver reach of
    the domain boundary. Carries the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class LevelSetEscapesDomainError(ValidationError):
    """Requested level u**2/2 is not strictly below the admissible cap, so
    the level set is not guaranteed to stay inside the domain."""
