"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: usage problems exit 1, data errors exit 2,
backend errors exit 3.
"""

from __future__ import annotations


class SpecialistError(Exception):
    """Base class for all package errors."""


class ConfigError(SpecialistError):
    """Invalid experiment configuration or CLI usage."""


# --- data errors ---------------------------------------------------------


class DataError(SpecialistError):
    """Base class for malformed or inconsistent input data."""


class InvalidCategory(DataError):
    pass


class ParseError(DataError):
    """Malformed record in a line-delimited file."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class SpanIntegrityError(DataError):
    """Error span offsets do not reproduce the span text."""


class EmptySuiteError(DataError):
    pass


class TagError(DataError):
    """Unbalanced or repeated span markup in a WMT TSV row."""


class ConsistencyError(DataError):
    """Rows of the same (system, segment) disagree on the target text."""


class BuildError(DataError):
    """ICL construction constraint could not be satisfied."""


class AlignmentError(DataError):
    """Two collections expected to share keys do not."""


class RoundError(DataError):
    """Referenced rating round does not exist in the suite."""


class FencingError(DataError):
    """Text to be fenced already contains triple backticks."""


class MissingScoreError(DataError):
    """Score-prompt rendering requires a score on every ICL entry."""


class ResponseParseError(DataError):
    """Model response could not be parsed into a rating."""


class RangeError(DataError):
    """Parsed score falls outside the documented scale."""


class LabelingError(DataError):
    """Character labelings of unequal length were compared."""


class MetaEvalError(DataError):
    """Meta-evaluation input is degenerate (e.g. no pairs formable)."""


class CoverageError(DataError):
    """Cross-rater analysis requires every rater to cover every item."""


# --- backend errors ------------------------------------------------------


class BackendError(SpecialistError):
    """One or more prompts failed after exhausting retries.

    Carries the index of the first failing prompt, all per-index failure
    messages, and the partial result list (None at failed indices) so a
    caller can persist what succeeded.
    """

    def __init__(
        self,
        index: int,
        failures: tuple[tuple[int, str], ...],
        partial: tuple[str | None, ...],
    ):
        self.index = index
        self.failures = failures
        self.partial = partial
        super().__init__(f"{len(failures)} prompt(s) failed, first at index {index}")


class TransientBackendError(SpecialistError):
    """Retryable failure: transport error, 429, or 5xx."""


class BackendCallError(SpecialistError):
    """Non-retryable failure for a single evaluation call."""
