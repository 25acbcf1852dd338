"""Analysis surfaces: utility/Pareto curves, held-out coverage, stability sweep.

The tool emits data files (CSV/JSON); rendering figures from them is a
downstream concern.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .artifact import VocabularyArtifact
from .errors import (
    EmptyStreamError,
    KOutOfBoundsError,
    SizeExceedsCorpusError,
    TokenOutOfRangeError,
)
from .flops import ArchitectureProfile
from .frequency import CoverageCurve, FrequencyTable
from .ingest import ConversationRecord, SpanCorpus
from .objective import ObjectiveConfig, evaluate_many
from .tpe import TpeConfig, optimize_tpe


@dataclass(frozen=True)
class CurvePoint:
    k: int
    coverage: float
    reduction: float
    utility: float
    feasible: bool


@dataclass(frozen=True)
class CoverageReport:
    """Coverage of an artifact's kept set over a held-out token stream."""

    total_tokens: int
    freq_coverage: float
    unique_tokens: int
    unique_coverage: float
    missing_top: list[tuple[int, int]]  # (token id, count), count desc


@dataclass(frozen=True)
class StabilityPoint:
    sample_size: int
    rng_seed: int
    k_star: int


def emit_curves(
    curve: CoverageCurve,
    profile: ArchitectureProfile,
    cfg: ObjectiveConfig,
    ks: Iterable[int] | None = None,
    stride: int | None = None,
) -> list[CurvePoint]:
    """Evaluate the objective at the requested k values, sorted ascending.

    Either pass explicit ``ks`` or a ``stride``; a stride walks
    k_min, k_min+stride, ... and always includes k_max as the final point.
    """
    k_min, k_max = cfg.bounds_for(profile)
    if (ks is None) == (stride is None):
        raise ValueError("pass exactly one of ks or stride")
    if stride is not None:
        if stride < 1:
            raise ValueError("stride must be >= 1")
        grid = list(range(k_min, k_max + 1, stride))
        if grid[-1] != k_max:
            grid.append(k_max)
    else:
        grid = sorted(int(k) for k in ks)
        if grid and (grid[0] < k_min or grid[-1] > k_max):
            raise KOutOfBoundsError(
                f"requested k outside [{k_min}, {k_max}]"
            )
    ks_arr = np.asarray(grid, dtype=np.int64)
    coverage, reduction, util, feasible, _ = evaluate_many(curve, profile, cfg, ks_arr)
    return [
        CurvePoint(
            k=int(ks_arr[i]),
            coverage=float(coverage[i]),
            reduction=float(reduction[i]),
            utility=float(util[i]),
            feasible=bool(feasible[i]),
        )
        for i in range(len(ks_arr))
    ]


def write_curves_csv(points: Sequence[CurvePoint], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "coverage", "reduction", "utility", "feasible"])
        for p in points:
            writer.writerow(
                [p.k, repr(p.coverage), repr(p.reduction), repr(p.utility), str(p.feasible).lower()]
            )


def evaluate_coverage(
    artifact: VocabularyArtifact,
    tokens: Iterable[int],
    *,
    top_missing: int = 50,
) -> CoverageReport:
    """Measure how much of a generation stream the kept vocabulary covers.

    freq_coverage weighs tokens by occurrence; unique_coverage counts each
    distinct token once. The two are reported independently. ``missing_top``
    lists the most frequent uncovered tokens (ties broken by lower id) so
    systematically absent vocabulary is visible at a glance.
    """
    counts: Counter[int] = Counter()
    for t in tokens:
        counts[t] += 1
    if not counts:
        raise EmptyStreamError("generation stream contained no tokens")
    low, high = min(counts), max(counts)
    if low < 0 or high >= artifact.vocab_size:
        raise TokenOutOfRangeError(
            f"generation tokens outside [0, {artifact.vocab_size}): "
            f"saw min={low}, max={high}"
        )
    t2d = artifact.t2d
    total = sum(counts.values())
    covered_occurrences = 0
    covered_distinct = 0
    missing: list[tuple[int, int]] = []
    for token, count in counts.items():
        if t2d[token] >= 0:
            covered_occurrences += count
            covered_distinct += 1
        else:
            missing.append((token, count))
    missing.sort(key=lambda tc: (-tc[1], tc[0]))
    return CoverageReport(
        total_tokens=total,
        freq_coverage=covered_occurrences / total,
        unique_tokens=len(counts),
        unique_coverage=covered_distinct / len(counts),
        missing_top=missing[:top_missing],
    )


COVERAGE_REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": [
        "total_tokens",
        "freq_coverage",
        "unique_tokens",
        "unique_coverage",
        "missing_top",
    ],
    "properties": {
        "total_tokens": {"type": "integer", "minimum": 0},
        "freq_coverage": {"type": "number", "minimum": 0, "maximum": 1},
        "unique_tokens": {"type": "integer", "minimum": 0},
        "unique_coverage": {"type": "number", "minimum": 0, "maximum": 1},
        "missing_top": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["token_id", "count"],
                "properties": {
                    "token_id": {"type": "integer", "minimum": 0},
                    "count": {"type": "integer", "minimum": 1},
                    "text": {"type": "string"},
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}


def coverage_report_to_dict(
    report: CoverageReport, token_texts: dict[int, str] | None = None
) -> dict:
    """JSON form of a coverage report, matching COVERAGE_REPORT_SCHEMA.

    Token text is attached only when a token-string map is supplied;
    detokenization is otherwise out of reach of this tool.
    """
    missing = []
    for token, count in report.missing_top:
        entry: dict = {"token_id": token, "count": count}
        if token_texts is not None and token in token_texts:
            entry["text"] = token_texts[token]
        missing.append(entry)
    return {
        "total_tokens": report.total_tokens,
        "freq_coverage": report.freq_coverage,
        "unique_tokens": report.unique_tokens,
        "unique_coverage": report.unique_coverage,
        "missing_top": missing,
    }


def load_token_map(path: str | Path) -> dict[int, str]:
    """Read a JSONL token-string map: {"id": <uint>, "text": "<str>"} per line."""
    mapping: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            mapping[int(obj["id"])] = str(obj["text"])
    return mapping


def _coerce_corpus(
    corpus: SpanCorpus | Iterable[ConversationRecord], vocab_size: int
) -> SpanCorpus:
    if isinstance(corpus, SpanCorpus):
        if corpus.vocab_size != vocab_size:
            raise ValueError(
                f"corpus vocab_size {corpus.vocab_size} != profile vocab_size {vocab_size}"
            )
        return corpus
    return SpanCorpus.from_records(corpus, vocab_size)


def stability_sweep(
    corpus: SpanCorpus | Iterable[ConversationRecord],
    sizes: Sequence[int],
    seeds: Sequence[int],
    profile: ArchitectureProfile,
    obj: ObjectiveConfig,
    tpe: TpeConfig,
    *,
    jobs: int = 1,
) -> list[StabilityPoint]:
    """Re-optimize on record-level subsamples and record each k_star.

    For every (size, seed) pair: draw ``size`` records uniformly without
    replacement, rebuild the frequency table from their assistant tokens,
    and rerun the seeded search. The point's seed drives both the subsample
    and the search, so the full-corpus point reproduces a plain study with
    the same seed. Output is ordered by (size, seed) regardless of
    execution order.
    """
    store = _coerce_corpus(corpus, profile.vocab_size)
    n_records = len(store)
    for size in sizes:
        if size < 1:
            raise ValueError(f"sample size must be >= 1, got {size}")
        if size > n_records:
            raise SizeExceedsCorpusError(
                f"sample size {size} exceeds corpus record count {n_records}"
            )

    def run_point(size: int, seed: int) -> StabilityPoint:
        rng = np.random.default_rng(seed)
        indices = rng.choice(n_records, size=size, replace=False)
        table = FrequencyTable.from_counts(store.counts_for(indices), profile.vocab_size)
        curve = CoverageCurve.from_table(table)
        study = optimize_tpe(curve, profile, obj, replace(tpe, rng_seed=seed))
        return StabilityPoint(sample_size=size, rng_seed=seed, k_star=study.k_star)

    points = sorted((int(s), int(seed)) for s in sizes for seed in seeds)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda p: run_point(*p), points))
    return [run_point(size, seed) for size, seed in points]


def write_stability_csv(points: Sequence[StabilityPoint], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_size", "seed", "k_star"])
        for p in points:
            writer.writerow([p.sample_size, p.rng_seed, p.k_star])
