"""Token frequency accumulation and the coverage function.

The frequency table is the empirical distribution of token occurrences over
assistant spans. The coverage curve orders tokens by descending count (ties
broken by ascending token id, for reproducible artifacts) and prefix-sums
the counts, so coverage-at-k is a single O(1) lookup.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyCorpusError,
    ForcedExceedsKError,
    KTooLargeError,
    TokenOutOfRangeError,
    VocabSizeMismatchError,
)


@dataclass(frozen=True)
class FrequencyTable:
    """Occurrence counts per token id over assistant spans.

    Zero-count tokens are not stored; ``total`` is the sum of all counts.
    A table with ``total == 0`` is a valid empty-corpus state: it can be
    merged and serialized, but coverage queries against it raise
    :class:`EmptyCorpusError`.
    """

    counts: dict[int, int]
    total: int
    vocab_size: int

    @property
    def is_empty(self) -> bool:
        return self.total == 0

    @property
    def distinct_tokens(self) -> int:
        return len(self.counts)

    @classmethod
    def from_counts(
        cls, counts: Mapping[int, int] | np.ndarray, vocab_size: int
    ) -> "FrequencyTable":
        if vocab_size <= 0:
            raise ValueError("vocab_size must be positive")
        if isinstance(counts, np.ndarray):
            if len(counts) > vocab_size:
                raise TokenOutOfRangeError(
                    f"counts array of length {len(counts)} exceeds vocab_size {vocab_size}"
                )
            if counts.size and int(counts.min()) < 0:
                raise ValueError("counts must be non-negative")
            nonzero = np.flatnonzero(counts)
            mapping = {int(v): int(counts[v]) for v in nonzero}
        else:
            mapping = {int(v): int(c) for v, c in counts.items() if c != 0}
            for v, c in mapping.items():
                if c < 0:
                    raise ValueError(f"negative count for token {v}")
                if not 0 <= v < vocab_size:
                    raise TokenOutOfRangeError(
                        f"token {v} outside [0, {vocab_size})"
                    )
        return cls(counts=mapping, total=sum(mapping.values()), vocab_size=vocab_size)


def build_frequency_table(
    spans: Iterable[Sequence[int]], vocab_size: int
) -> FrequencyTable:
    """Accumulate occurrence counts over an iterable of token spans.

    Deterministic for a fixed input: the resulting table compares equal no
    matter how the spans were sharded, because only the counts matter.
    """
    if vocab_size <= 0:
        raise ValueError("vocab_size must be positive")
    counter: Counter[int] = Counter()
    for span in spans:
        counter.update(span)
    if counter:
        low, high = min(counter), max(counter)
        if low < 0 or high >= vocab_size:
            raise TokenOutOfRangeError(
                f"span tokens outside [0, {vocab_size}): saw min={low}, max={high}"
            )
    return FrequencyTable(
        counts=dict(counter), total=sum(counter.values()), vocab_size=vocab_size
    )


def merge(a: FrequencyTable, b: FrequencyTable) -> FrequencyTable:
    """Pointwise sum of two tables; commutative and associative."""
    if a.vocab_size != b.vocab_size:
        raise VocabSizeMismatchError(
            f"cannot merge tables with vocab_size {a.vocab_size} and {b.vocab_size}"
        )
    merged = Counter(a.counts)
    merged.update(b.counts)
    return FrequencyTable(
        counts=dict(merged), total=a.total + b.total, vocab_size=a.vocab_size
    )


def to_canonical_json(table: FrequencyTable) -> str:
    """Serialize with counts sorted by token id, one pair per line (diff-friendly)."""
    lines = [
        "{",
        f'  "vocab_size": {table.vocab_size},',
        f'  "total": {table.total},',
    ]
    if table.counts:
        lines.append('  "counts": [')
        items = sorted(table.counts.items())
        for i, (token, count) in enumerate(items):
            comma = "," if i + 1 < len(items) else ""
            lines.append(f"    [{token}, {count}]{comma}")
        lines.append("  ]")
    else:
        lines.append('  "counts": []')
    lines.append("}")
    return "\n".join(lines) + "\n"


def from_json(text: str) -> FrequencyTable:
    obj = json.loads(text)
    for key in ("vocab_size", "total", "counts"):
        if key not in obj:
            raise ValueError(f"frequency table JSON missing key {key!r}")
    table = FrequencyTable.from_counts(
        {int(v): int(c) for v, c in obj["counts"]}, obj["vocab_size"]
    )
    if table.total != obj["total"]:
        raise ValueError(
            f"frequency table total {obj['total']} does not match counts sum {table.total}"
        )
    return table


def fingerprint(table: FrequencyTable) -> str:
    """sha256 over the canonical serialization; identifies the corpus content."""
    return hashlib.sha256(to_canonical_json(table).encode("utf-8")).hexdigest()


class CoverageCurve:
    """Descending-frequency prefix-sum view of a frequency table.

    ``order`` holds distinct token ids sorted by (count desc, id asc);
    ``prefix[i]`` is the total count of the first i tokens of that order.
    """

    def __init__(self, order: np.ndarray, prefix: np.ndarray, total: int, vocab_size: int):
        self.order = order
        self.prefix = prefix
        self.total = total
        self.vocab_size = vocab_size
        self._dense_counts: np.ndarray | None = None

    @classmethod
    def from_table(cls, table: FrequencyTable) -> "CoverageCurve":
        n = len(table.counts)
        ids = np.fromiter(table.counts.keys(), dtype=np.int64, count=n)
        counts = np.fromiter(table.counts.values(), dtype=np.int64, count=n)
        # lexsort: last key is primary.
        idx = np.lexsort((ids, -counts))
        order = ids[idx]
        prefix = np.concatenate(([0], np.cumsum(counts[idx], dtype=np.int64)))
        return cls(order=order, prefix=prefix, total=table.total, vocab_size=table.vocab_size)

    @property
    def n_observed(self) -> int:
        return int(len(self.order))

    def _require_nonempty(self) -> None:
        if self.total == 0:
            raise EmptyCorpusError("coverage is undefined for an empty corpus")

    def coverage_at_many(self, ks: np.ndarray) -> np.ndarray:
        """Fraction of all occurrences covered by the top-k tokens, per k."""
        self._require_nonempty()
        ks = np.asarray(ks, dtype=np.int64)
        if ks.size and int(ks.min()) < 0:
            raise ValueError("k must be non-negative")
        idx = np.minimum(ks, len(self.order))
        return self.prefix[idx] / np.float64(self.total)

    def coverage_at(self, k: int) -> float:
        return float(self.coverage_at_many(np.array([k], dtype=np.int64))[0])

    def dense_counts(self) -> np.ndarray:
        """Counts indexed by token id (length vocab_size); cached."""
        if self._dense_counts is None:
            dense = np.zeros(self.vocab_size, dtype=np.int64)
            dense[self.order] = np.diff(self.prefix)
            self._dense_counts = dense
        return self._dense_counts

    def mass_fraction(self, tokens: np.ndarray) -> float:
        """Fraction of all occurrences accounted for by the given token set."""
        self._require_nonempty()
        covered = int(self.dense_counts()[np.asarray(tokens, dtype=np.int64)].sum())
        return float(np.int64(covered) / np.float64(self.total))


def top_k_tokens(
    curve: CoverageCurve, k: int, forced: Iterable[int] = ()
) -> np.ndarray:
    """The k-token draft vocabulary, sorted ascending by token id.

    Selection order: all forced tokens first (counted inside the k budget),
    then observed tokens by (count desc, id asc), then, if k still is not
    met, unobserved ids in ascending order so the result always has exactly
    k entries.
    """
    vocab_size = curve.vocab_size
    if k < 0:
        raise ValueError("k must be non-negative")
    if k > vocab_size:
        raise KTooLargeError(f"k={k} exceeds vocab_size={vocab_size}")
    forced_ids = sorted({int(t) for t in forced})
    if forced_ids and (forced_ids[0] < 0 or forced_ids[-1] >= vocab_size):
        raise TokenOutOfRangeError(
            f"forced tokens must lie in [0, {vocab_size})"
        )
    if len(forced_ids) > k:
        raise ForcedExceedsKError(
            f"{len(forced_ids)} forced tokens exceed the k={k} budget"
        )
    chosen = np.zeros(vocab_size, dtype=bool)
    chosen[forced_ids] = True
    need = k - len(forced_ids)
    if need > 0:
        available = curve.order[~chosen[curve.order]]
        take = available[:need]
        chosen[take] = True
        need -= len(take)
    if need > 0:
        observed = np.zeros(vocab_size, dtype=bool)
        observed[curve.order] = True
        pad_pool = np.flatnonzero(~chosen & ~observed)
        chosen[pad_pool[:need]] = True
    return np.flatnonzero(chosen).astype(np.int64)
