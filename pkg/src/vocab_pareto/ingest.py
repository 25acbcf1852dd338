"""Streaming ingestion of tokenized conversation corpora.

Input is JSONL, one conversation per line. Two schemas are supported:

* ``role_labeled``: ``{"messages": [{"role": "<str>", "tokens": [<uint>, ...]}, ...]}``.
  Assistant spans are the token sequences of messages whose role is
  ``assistant``; unknown role strings map to ``other`` and are never counted.
* ``raw_stream``: ``{"tokens": [<uint>, ...]}``. Assistant spans are located
  by scanning for start/end delimiter token sequences.

Reading is line-by-line; memory use is bounded by the largest single record,
never by file size.
"""

from __future__ import annotations

import array
import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .errors import MalformedCorpusError

logger = logging.getLogger(__name__)


class Role(enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    OTHER = "other"

    @classmethod
    def from_str(cls, raw: str) -> "Role":
        try:
            return cls(raw)
        except ValueError:
            return cls.OTHER


@dataclass(frozen=True)
class Message:
    role: Role
    tokens: tuple[int, ...]


@dataclass(frozen=True)
class ConversationRecord:
    messages: tuple[Message, ...]

    def all_tokens(self) -> list[int]:
        """Every token of the record in message order, roles ignored."""
        out: list[int] = []
        for message in self.messages:
            out.extend(message.tokens)
        return out


@dataclass(frozen=True)
class DelimiterSpec:
    """Token sequences that open and close an assistant turn."""

    assistant_start: tuple[int, ...]
    assistant_end: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.assistant_start or not self.assistant_end:
            raise ValueError("delimiter sequences must be non-empty")
        if self.assistant_start == self.assistant_end:
            raise ValueError("assistant_start and assistant_end must differ")


@dataclass
class IngestStats:
    """Line-level accounting for one JSONL read."""

    lines_read: int = 0
    malformed_lines: int = 0
    first_bad_line: int | None = None
    last_bad_line: int | None = None


@dataclass
class SpanStreamStats:
    records_read: int = 0
    spans_found: int = 0
    tokens_emitted: int = 0
    out_of_range_tokens: int = 0
    unterminated_spans: int = 0


class AssistantSpanStream:
    """Single-pass iterator of assistant token spans.

    ``stats`` is updated as the stream is consumed and is only complete
    once the iterator is exhausted.
    """

    def __init__(self, spans: Iterator[list[int]], stats: SpanStreamStats) -> None:
        self._spans = spans
        self.stats = stats

    def __iter__(self) -> Iterator[list[int]]:
        return self._spans


class _Malformed(Exception):
    """Internal: one line failed schema validation."""


def _parse_tokens(raw: object) -> tuple[int, ...]:
    if not isinstance(raw, list):
        raise _Malformed("tokens must be a list")
    for t in raw:
        if isinstance(t, bool) or not isinstance(t, int) or t < 0:
            raise _Malformed(f"token {t!r} is not a non-negative integer")
    return tuple(raw)


def _parse_record(line: str, fmt: str) -> ConversationRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise _Malformed(str(exc)) from None
    if not isinstance(obj, dict):
        raise _Malformed("record is not an object")
    if fmt == "raw_stream":
        if "tokens" not in obj:
            raise _Malformed("missing 'tokens'")
        return ConversationRecord(
            messages=(Message(Role.OTHER, _parse_tokens(obj["tokens"])),)
        )
    if "messages" not in obj or not isinstance(obj["messages"], list):
        raise _Malformed("missing 'messages' list")
    messages = []
    for msg in obj["messages"]:
        if not isinstance(msg, dict) or not isinstance(msg.get("role"), str):
            raise _Malformed("message must be an object with a string 'role'")
        messages.append(Message(Role.from_str(msg["role"]), _parse_tokens(msg.get("tokens", []))))
    return ConversationRecord(messages=tuple(messages))


class ConversationStream:
    """Lazy record stream over a JSONL source.

    Malformed lines are skipped and counted. The stream raises
    :class:`MalformedCorpusError` as soon as the running malformed count
    exceeds ``error_budget * lines_read`` (a single malformed line is always
    tolerated when the budget is positive; a budget of 0 fails on the first).
    """

    def __init__(
        self,
        source: str | Path | IO[str],
        fmt: str = "role_labeled",
        *,
        error_budget: float = 0.01,
    ) -> None:
        if fmt not in ("role_labeled", "raw_stream"):
            raise ValueError(f"unknown corpus format {fmt!r}")
        if error_budget < 0:
            raise ValueError("error_budget must be non-negative")
        self._source = source
        self._fmt = fmt
        self._error_budget = error_budget
        self.stats = IngestStats()

    def _iter_lines(self) -> Iterator[str]:
        if hasattr(self._source, "read"):
            yield from self._source  # caller owns the handle
            return
        with open(self._source, encoding="utf-8") as fh:
            yield from fh

    def __iter__(self) -> Iterator[ConversationRecord]:
        stats = self.stats
        name = getattr(self._source, "name", str(self._source))
        for lineno, line in enumerate(self._iter_lines(), 1):
            stats.lines_read = lineno
            if not line.strip():
                continue
            try:
                yield _parse_record(line, self._fmt)
            except _Malformed as exc:
                stats.malformed_lines += 1
                if stats.first_bad_line is None:
                    stats.first_bad_line = lineno
                stats.last_bad_line = lineno
                logger.debug("skipping malformed line %d: %s", lineno, exc)
                allowed = (
                    max(1.0, self._error_budget * stats.lines_read)
                    if self._error_budget > 0
                    else 0.0
                )
                if stats.malformed_lines > allowed:
                    raise MalformedCorpusError(
                        name,
                        stats.malformed_lines,
                        stats.lines_read,
                        stats.first_bad_line,
                        stats.last_bad_line,
                    ) from None


def read_conversations(
    source: str | Path | IO[str],
    fmt: str = "role_labeled",
    *,
    error_budget: float = 0.01,
) -> ConversationStream:
    """Open a JSONL corpus as a lazy :class:`ConversationStream`."""
    if not hasattr(source, "read") and not Path(source).exists():
        raise FileNotFoundError(f"corpus file not found: {source}")
    return ConversationStream(source, fmt, error_budget=error_budget)


def _filtered(tokens: Sequence[int], vocab_size: int | None, stats: SpanStreamStats) -> list[int]:
    if vocab_size is None:
        return list(tokens)
    kept = [t for t in tokens if t < vocab_size]
    stats.out_of_range_tokens += len(tokens) - len(kept)
    return kept


def extract_assistant_spans(
    records: Iterable[ConversationRecord],
    vocab_size: int | None = None,
) -> AssistantSpanStream:
    """Yield the token sequence of every assistant message, in order.

    Tokens at or above ``vocab_size`` (corrupt data) are dropped from spans
    and counted in the stream stats rather than poisoning the tail of the
    frequency table.
    """
    stats = SpanStreamStats()

    def gen() -> Iterator[list[int]]:
        for record in records:
            stats.records_read += 1
            for message in record.messages:
                if message.role is not Role.ASSISTANT:
                    continue
                span = _filtered(message.tokens, vocab_size, stats)
                stats.spans_found += 1
                stats.tokens_emitted += len(span)
                yield span

    return AssistantSpanStream(gen(), stats)


def _find_subsequence(haystack: Sequence[int], needle: Sequence[int], start: int) -> int:
    n, m = len(haystack), len(needle)
    first = needle[0]
    for i in range(start, n - m + 1):
        if haystack[i] == first and tuple(haystack[i : i + m]) == tuple(needle):
            return i
    return -1


@dataclass(frozen=True)
class DelimiterScan:
    """Spans found between delimiter markers, plus the unterminated count."""

    spans: list[list[int]]
    unterminated: int


def extract_spans_by_delimiter(tokens: Sequence[int], spec: DelimiterSpec) -> DelimiterScan:
    """Scan left to right for non-overlapping spans strictly between a start
    marker and the next end marker.

    Matching is exact subsequence equality on token ids. A start marker with
    no following end marker yields a span running to the end of the sequence
    (training-time loss masks usually include trailing generations; dropping
    it would bias the counts) and is reported as unterminated.
    """
    spans: list[list[int]] = []
    unterminated = 0
    pos = 0
    while True:
        s = _find_subsequence(tokens, spec.assistant_start, pos)
        if s < 0:
            break
        content_start = s + len(spec.assistant_start)
        e = _find_subsequence(tokens, spec.assistant_end, content_start)
        if e < 0:
            spans.append(list(tokens[content_start:]))
            unterminated += 1
            break
        spans.append(list(tokens[content_start:e]))
        pos = e + len(spec.assistant_end)
    return DelimiterScan(spans=spans, unterminated=unterminated)


def extract_assistant_spans_by_delimiter(
    records: Iterable[ConversationRecord],
    spec: DelimiterSpec,
    vocab_size: int | None = None,
) -> AssistantSpanStream:
    """Delimiter-based counterpart of :func:`extract_assistant_spans`.

    Each record's messages are concatenated in order and scanned for
    delimiter-wrapped spans; marker tokens themselves are not part of spans.
    """
    stats = SpanStreamStats()

    def gen() -> Iterator[list[int]]:
        for record in records:
            stats.records_read += 1
            scan = extract_spans_by_delimiter(record.all_tokens(), spec)
            stats.unterminated_spans += scan.unterminated
            for raw_span in scan.spans:
                span = _filtered(raw_span, vocab_size, stats)
                stats.spans_found += 1
                stats.tokens_emitted += len(span)
                yield span

    return AssistantSpanStream(gen(), stats)


class SpanCorpus:
    """Record-addressable store of assistant-span tokens.

    Keeps one flat token buffer plus per-record offsets so that record-level
    subsampling and frequency rebuilds are O(tokens selected) with no Python
    per-token loops. Only assistant tokens are stored; that is all a
    frequency rebuild needs.
    """

    def __init__(self, tokens: np.ndarray, offsets: np.ndarray, vocab_size: int) -> None:
        if offsets[0] != 0 or offsets[-1] != len(tokens):
            raise ValueError("offsets must start at 0 and end at len(tokens)")
        self.tokens = tokens
        self.offsets = offsets
        self.vocab_size = vocab_size

    def __len__(self) -> int:
        return len(self.offsets) - 1

    @property
    def total_tokens(self) -> int:
        return int(len(self.tokens))

    @classmethod
    def from_token_lists(
        cls, per_record: Iterable[Sequence[int]], vocab_size: int
    ) -> "SpanCorpus":
        buf = array.array("i")
        offsets = array.array("q", [0])
        for tokens in per_record:
            buf.extend(tokens)
            offsets.append(len(buf))
        return cls(
            np.frombuffer(buf, dtype=np.int32).copy() if len(buf) else np.empty(0, np.int32),
            np.frombuffer(offsets, dtype=np.int64).copy(),
            vocab_size,
        )

    @classmethod
    def from_records(
        cls, records: Iterable[ConversationRecord], vocab_size: int
    ) -> "SpanCorpus":
        def assistant_tokens() -> Iterator[list[int]]:
            for record in records:
                toks: list[int] = []
                for message in record.messages:
                    if message.role is Role.ASSISTANT:
                        toks.extend(t for t in message.tokens if t < vocab_size)
                yield toks

        return cls.from_token_lists(assistant_tokens(), vocab_size)

    def counts_for(self, record_indices: np.ndarray) -> np.ndarray:
        """Dense token counts over the selected records (length vocab_size)."""
        idx = np.asarray(record_indices, dtype=np.int64)
        starts = self.offsets[idx]
        lengths = self.offsets[idx + 1] - starts
        total = int(lengths.sum())
        if total == 0:
            return np.zeros(self.vocab_size, dtype=np.int64)
        # Expand [start, start+len) ranges into flat positions without a loop.
        ends = np.cumsum(lengths)
        positions = np.arange(total, dtype=np.int64)
        positions += np.repeat(starts - (ends - lengths), lengths)
        return np.bincount(self.tokens[positions], minlength=self.vocab_size).astype(np.int64)

    def counts_all(self) -> np.ndarray:
        if len(self.tokens) == 0:
            return np.zeros(self.vocab_size, dtype=np.int64)
        return np.bincount(self.tokens, minlength=self.vocab_size).astype(np.int64)
