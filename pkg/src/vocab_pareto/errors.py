"""Exception hierarchy.

Every error raised by this package derives from :class:`VocabParetoError`,
so callers can catch one type at the boundary. The CLI maps these onto its
documented exit codes.
"""

from __future__ import annotations


class VocabParetoError(Exception):
    """Base class for all errors raised by vocab-pareto."""


class MalformedCorpusError(VocabParetoError):
    """Malformed JSONL lines exceeded the configured error budget."""

    def __init__(
        self,
        path: str,
        malformed_lines: int,
        lines_read: int,
        first_bad_line: int,
        last_bad_line: int,
    ) -> None:
        self.path = path
        self.malformed_lines = malformed_lines
        self.lines_read = lines_read
        self.first_bad_line = first_bad_line
        self.last_bad_line = last_bad_line
        super().__init__(
            f"{path}: {malformed_lines} malformed line(s) in {lines_read} read "
            f"exceeds the error budget (first bad line {first_bad_line}, "
            f"last bad line {last_bad_line})"
        )


class EmptyCorpusError(VocabParetoError):
    """A coverage query was made against a table with zero total tokens."""


class EmptyStreamError(VocabParetoError):
    """A generation stream to evaluate contained no tokens."""


class VocabSizeMismatchError(VocabParetoError):
    """Two frequency tables with different vocabulary sizes cannot be merged."""


class TokenOutOfRangeError(VocabParetoError, ValueError):
    """A token id fell outside [0, vocab_size)."""


class KTooLargeError(VocabParetoError, ValueError):
    """A requested vocabulary size k exceeds the full vocabulary size."""


class KOutOfBoundsError(VocabParetoError, ValueError):
    """A candidate k fell outside the configured [k_min, k_max] range."""


class ForcedExceedsKError(VocabParetoError, ValueError):
    """More forced-include tokens were supplied than the k budget allows."""


class SizeExceedsCorpusError(VocabParetoError, ValueError):
    """A subsample size exceeds the number of records in the corpus."""


class InfeasibleStudyError(VocabParetoError):
    """No trial satisfied the minimum-coverage constraint.

    Carries the maximum coverage observed so the caller can decide whether
    to lower ``c_min`` or raise ``k_max``.
    """

    def __init__(self, message: str, max_coverage: float) -> None:
        self.max_coverage = max_coverage
        super().__init__(f"{message} (max observed coverage {max_coverage:.6f})")


class MissingFileError(VocabParetoError, FileNotFoundError):
    """A required artifact file is absent."""


class HashMismatchError(VocabParetoError):
    """An artifact buffer failed checksum verification."""

    def __init__(self, filename: str, expected: str, actual: str) -> None:
        self.filename = filename
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"{filename}: sha256 mismatch (expected {expected}, got {actual})"
        )


class InvariantViolationError(VocabParetoError):
    """A structural invariant of an artifact or table does not hold."""

    def __init__(self, invariant: str, detail: str = "") -> None:
        self.invariant = invariant
        msg = f"invariant violated: {invariant}"
        if detail:
            msg = f"{msg} ({detail})"
        super().__init__(msg)
