"""Shared exception types."""

from __future__ import annotations


class CorrboundError(Exception):
    """Base class for all package-specific errors."""


class DegenerateRow(CorrboundError):
    """A matrix row has (numerically) zero variance, so its correlations
    with other rows are undefined."""

    def __init__(self, row: int, message: str | None = None):
        self.row = row
        super().__init__(message or f"row {row} has zero centered norm")


class EmptySample(CorrboundError):
    """An order statistic was requested from an empty sample."""


class InsufficientData(CorrboundError):
    """Fewer in-range observations than the minimum merged-bin count."""


class DegenerateRange(CorrboundError):
    """The trimmed value range collapses to a single point."""


class TooFewTrajectories(CorrboundError):
    """A trajectory-level split needs at least two trajectories."""


class EmptyValidationSet(CorrboundError):
    """No scorable observations in the validation data."""


class TrainingOverlap(CorrboundError):
    """Refusal to score a bound on data that overlaps its training set."""


class SchemaMismatch(CorrboundError):
    """A persisted file does not have the expected structure."""


class InvariantViolation(CorrboundError):
    """A persisted file parses but violates a type invariant."""
