"""Exception types shared across the package.

Every error raised on a user-facing path derives from TabpoisonError so the
CLI can map failures onto its exit codes: config problems (exit 2), data
problems (exit 3) and numerical failures (exit 4).
"""

from __future__ import annotations


class TabpoisonError(Exception):
    """Base class for all package errors."""


class ConfigError(TabpoisonError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class DataError(TabpoisonError):
    """Invalid or malformed data (CLI exit code 3)."""


class NumericalError(TabpoisonError):
    """Numerical failure during optimization or scoring (CLI exit code 4)."""


# --- data ingestion ---------------------------------------------------------

class MissingColumn(DataError):
    """A column required by the schema is absent from the file."""


class UnparsableCell(DataError):
    """A cell could not be parsed as its declared type."""

    def __init__(self, row: int, column: str, token: str):
        self.row = row
        self.column = column
        self.token = token
        super().__init__(f"row {row}, column {column!r}: cannot parse {token!r}")


class UnknownLabel(DataError):
    """A label value not listed in the schema's class set."""


class EmptyFile(DataError):
    """The input file contains no data rows."""


class DegenerateSplit(DataError):
    """A requested split would leave the train or test side empty."""


class EmptyColumnList(ConfigError):
    """An operation was given an empty list of columns to act on."""


# --- encoding ---------------------------------------------------------------

class EmptyColumn(DataError):
    """A categorical column has no values to fit an encoding on."""


class UnknownCategory(DataError):
    """A category token absent from the fitted encoding table."""

    def __init__(self, feature: str, token: str):
        self.feature = feature
        self.token = token
        super().__init__(f"feature {feature!r}: unknown category {token!r}")


class UnmappableValue(DataError):
    """An encoded value that matches no entry of the reverse table."""

    def __init__(self, feature: str, value: float):
        self.feature = feature
        self.value = value
        super().__init__(f"feature {feature!r}: no category maps to {value!r}")


class NotCategorical(ConfigError):
    """A categorical-only operation was pointed at a numerical feature."""


class TieResolutionError(NumericalError):
    """Tie-offset resolution failed to reach distinct values."""


class CorruptBook(DataError):
    """An encoding book failed its checksum or bijectivity check on load."""


# --- models -----------------------------------------------------------------

class NonFiniteLoss(NumericalError):
    """Training or trigger optimization produced a NaN or infinite loss."""


class ShapeMismatch(ConfigError):
    """Input dimensions do not match what the model was built for."""


class ModelFormatError(DataError):
    """A stored model file is malformed or has an unsupported version."""


# --- attack -----------------------------------------------------------------

class NoNonTargetRows(DataError):
    """Candidate selection found no rows outside the target class."""


class NoProgress(NumericalError):
    """Trigger optimization failed to reduce the loss or to fool the model."""

    def __init__(self, message: str, loss_trace: list | None = None):
        self.loss_trace = loss_trace or []
        super().__init__(message)


# --- metrics ----------------------------------------------------------------

class EmptyEligibleSet(DataError):
    """No rows are eligible for the requested rate (division by zero)."""


class LengthMismatch(ConfigError):
    """Two aligned sequences have different lengths."""


# --- defenses ---------------------------------------------------------------

class InsufficientBaseline(DataError):
    """A defense's clean baseline has too few rows per class."""
