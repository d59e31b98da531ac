"""Exception types shared across the solver."""


class RankDnnError(Exception):
    """Base class for all errors raised by this package."""


class ModelError(RankDnnError):
    """Problem data violates a structural requirement (asymmetry, negativity,
    inconsistent constraint system, infeasible combinatorial input)."""


class ParseError(RankDnnError):
    """Instance or solution file could not be parsed.

    Carries 1-based line/column of the offending token when known.
    """

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{message} (line {line}" + (
                f", column {column})" if column is not None else ")"
            )
        super().__init__(message)
        self.line = line
        self.column = column


class ExtractionError(RankDnnError):
    """A combinatorial solution could not be recovered from a matrix iterate."""


class SolverError(RankDnnError):
    """Numerical failure inside the solver (eigendecomposition breakdown,
    stalled splitting iteration on an infeasible constraint set)."""
