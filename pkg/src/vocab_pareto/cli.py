"""Subcommand front-end: count -> optimize -> trim -> evaluate -> curves -> sweep.

Every subcommand is a pure function of its inputs, flags, and seed, so
re-running a command reproduces its output files byte for byte. Values may
come from flags or from a JSON config file (``--config``); flags win on
conflict.

Exit codes: 0 ok, 2 I/O error, 3 input format error, 4 infeasible study,
5 invariant violation.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
from pathlib import Path
from typing import Iterator, Sequence

from ._version import __version__
from .artifact import ArtifactMeta, build_artifact, read_artifact, write_artifact
from .errors import (
    EmptyCorpusError,
    EmptyStreamError,
    ForcedExceedsKError,
    HashMismatchError,
    InfeasibleStudyError,
    InvariantViolationError,
    KOutOfBoundsError,
    KTooLargeError,
    MalformedCorpusError,
    SizeExceedsCorpusError,
    TokenOutOfRangeError,
    VocabParetoError,
    VocabSizeMismatchError,
)
from .flops import ArchitectureProfile, load_profile
from .frequency import (
    CoverageCurve,
    build_frequency_table,
    fingerprint,
    from_json,
    to_canonical_json,
)
from .ingest import (
    DelimiterSpec,
    SpanCorpus,
    extract_assistant_spans,
    extract_assistant_spans_by_delimiter,
    extract_spans_by_delimiter,
    read_conversations,
)
from .objective import ObjectiveConfig
from .report import (
    coverage_report_to_dict,
    emit_curves,
    evaluate_coverage,
    load_token_map,
    stability_sweep,
    study_curve_points,
    write_curves_csv,
    write_stability_csv,
)
from .tpe import TpeConfig, optimize_exhaustive, optimize_tpe, study_to_dict

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 2
EXIT_FORMAT = 3
EXIT_INFEASIBLE = 4
EXIT_INVARIANT = 5

_FORMAT_ERRORS = (
    MalformedCorpusError,
    EmptyCorpusError,
    EmptyStreamError,
    VocabSizeMismatchError,
    TokenOutOfRangeError,
    KTooLargeError,
    KOutOfBoundsError,
    ForcedExceedsKError,
    SizeExceedsCorpusError,
    json.JSONDecodeError,
    ValueError,
)


def _int_list(raw: str) -> list[int]:
    try:
        return [int(part) for part in raw.split(",") if part.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {raw!r}")


class _Config:
    """Flag/config-file resolution; flags always win."""

    def __init__(self, path: str | None) -> None:
        self.data: dict = {}
        if path:
            with open(path, encoding="utf-8") as fh:
                self.data = json.load(fh)
            if not isinstance(self.data, dict):
                raise ValueError("config file must contain a JSON object")

    def pick(self, flag_value, *keys, default=None):
        if flag_value is not None:
            return flag_value
        node = self.data
        for key in keys:
            if not isinstance(node, dict) or key not in node:
                return default
            node = node[key]
        return node


def _delimiter_spec(cfg: _Config, args) -> DelimiterSpec | None:
    start = cfg.pick(args.assistant_start, "assistant_start")
    end = cfg.pick(args.assistant_end, "assistant_end")
    if start is None and end is None:
        return None
    if start is None or end is None:
        raise ValueError("--assistant-start and --assistant-end must be given together")
    return DelimiterSpec(assistant_start=tuple(start), assistant_end=tuple(end))


def _resolve_profile(cfg: _Config, args) -> ArchitectureProfile:
    ref = cfg.pick(getattr(args, "profile", None), "profile")
    if ref is None:
        raise ValueError("a profile is required (--profile NAME_OR_PATH)")
    if isinstance(ref, dict):
        return ArchitectureProfile.from_config(ref)
    return load_profile(ref)


def _objective_config(cfg: _Config, args, defaults: ObjectiveConfig = ObjectiveConfig()) -> ObjectiveConfig:
    return ObjectiveConfig(
        alpha=cfg.pick(args.alpha, "objective", "alpha", default=defaults.alpha),
        c_min=cfg.pick(args.c_min, "objective", "c_min", default=defaults.c_min),
        k_min=cfg.pick(args.k_min, "objective", "k_min", default=defaults.k_min),
        k_max=cfg.pick(args.k_max, "objective", "k_max", default=defaults.k_max),
        penalty_value=cfg.pick(
            args.penalty, "objective", "penalty_value", default=defaults.penalty_value
        ),
    )


def _tpe_config(cfg: _Config, args, seed: int) -> TpeConfig:
    defaults = TpeConfig()
    return TpeConfig(
        n_trials=cfg.pick(args.trials, "tpe", "n_trials", default=defaults.n_trials),
        n_startup_trials=cfg.pick(
            args.startup_trials, "tpe", "n_startup_trials", default=defaults.n_startup_trials
        ),
        n_candidates=cfg.pick(
            args.candidates, "tpe", "n_candidates", default=defaults.n_candidates
        ),
        rng_seed=seed,
    )


def _out_dir(cfg: _Config, args) -> Path:
    out = Path(cfg.pick(args.out_dir, "out_dir", default="."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_table(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        return from_json(fh.read())


def _record_stream(cfg: _Config, args, *, vocab_size: int | None):
    """Corpus records plus the matching span extractor for the chosen format."""
    corpus = cfg.pick(args.corpus, "corpus")
    if corpus is None:
        raise ValueError("a corpus path is required (--corpus)")
    fmt = cfg.pick(args.format, "format", default="role_labeled")
    budget = cfg.pick(args.error_budget, "error_budget", default=0.01)
    records = read_conversations(corpus, fmt, error_budget=budget)
    spec = _delimiter_spec(cfg, args)
    if fmt == "raw_stream":
        if spec is None:
            raise ValueError(
                "raw_stream corpora need delimiters (--assistant-start/--assistant-end)"
            )
        spans = extract_assistant_spans_by_delimiter(records, spec, vocab_size)
    else:
        spans = (
            extract_assistant_spans_by_delimiter(records, spec, vocab_size)
            if spec is not None
            else extract_assistant_spans(records, vocab_size)
        )
    return records, spans


def cmd_count(args) -> int:
    cfg = _Config(args.config)
    vocab_size = cfg.pick(args.vocab_size, "vocab_size")
    if vocab_size is None:
        vocab_size = _resolve_profile(cfg, args).vocab_size
    records, spans = _record_stream(cfg, args, vocab_size=vocab_size)
    table = build_frequency_table(spans, vocab_size)
    out = Path(cfg.pick(args.out, "out", default=_out_dir(cfg, args) / "freq_table.json"))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(to_canonical_json(table), encoding="utf-8")
    stats = spans.stats
    print(
        f"records={stats.records_read} spans={stats.spans_found} "
        f"tokens={stats.tokens_emitted} distinct={table.distinct_tokens} "
        f"out_of_range={stats.out_of_range_tokens} "
        f"unterminated={stats.unterminated_spans} "
        f"malformed_skipped={records.stats.malformed_lines}"
    )
    print(f"wrote {out}")
    return EXIT_OK


def _study_and_artifact(args, cfg: _Config, *, explicit_k: int | None) -> int:
    table = _load_table(cfg.pick(args.freq_table, "freq_table"))
    profile = _resolve_profile(cfg, args)
    if table.vocab_size != profile.vocab_size:
        raise VocabSizeMismatchError(
            f"frequency table vocab_size {table.vocab_size} != "
            f"profile vocab_size {profile.vocab_size}"
        )
    curve = CoverageCurve.from_table(table)
    objective = _objective_config(cfg, args)
    seed = cfg.pick(args.seed, "seed", default=0)
    out = _out_dir(cfg, args)
    forced = cfg.pick(getattr(args, "forced_tokens", None), "forced_tokens", default=[])

    if explicit_k is not None:
        selected_by = "manual"
        k_star = explicit_k
    elif getattr(args, "exhaustive", False):
        selected_by = "exhaustive"
        study = optimize_exhaustive(curve, profile, objective)
        k_star = study.k_star
    else:
        selected_by = "tpe"
        tpe_cfg = _tpe_config(cfg, args, seed)
        study = optimize_tpe(curve, profile, objective, tpe_cfg)
        k_star = study.k_star

    if explicit_k is None:
        tpe_cfg = None if selected_by == "exhaustive" else tpe_cfg
        study_path = out / "study.json"
        study_path.write_text(
            json.dumps(study_to_dict(study, objective, tpe_cfg), indent=2) + "\n",
            encoding="utf-8",
        )
        print(f"k_star={k_star} wrote {study_path}")

    meta = ArtifactMeta(
        corpus_fingerprint=fingerprint(table),
        alpha=objective.alpha,
        c_min=objective.c_min,
        selected_by=selected_by,
    )
    art = build_artifact(curve, profile, k_star, forced, meta)
    paths = write_artifact(art, out, force=args.force)
    print(
        f"artifact k={art.k} coverage={art.coverage:.6f} reduction={art.reduction:.6f} "
        f"-> {paths['artifact.json']}"
    )
    return EXIT_OK


def cmd_optimize(args) -> int:
    return _study_and_artifact(args, _Config(args.config), explicit_k=None)


def cmd_trim(args) -> int:
    cfg = _Config(args.config)
    k = cfg.pick(args.k, "k")
    if k is None:
        raise ValueError("trim requires --k")
    return _study_and_artifact(args, cfg, explicit_k=k)


def _generation_tokens(cfg: _Config, args) -> Iterator[int]:
    spec = _delimiter_spec(cfg, args)
    fmt = cfg.pick(args.format, "format", default="role_labeled")
    budget = cfg.pick(args.error_budget, "error_budget", default=0.01)
    records = read_conversations(cfg.pick(args.generations, "generations"), fmt, error_budget=budget)
    if fmt == "raw_stream" and spec is None:
        # Whole-record token streams: everything counts as generated output.
        for record in records:
            yield from record.all_tokens()
        return
    if spec is not None:
        spans = extract_assistant_spans_by_delimiter(records, spec, None)
    else:
        spans = extract_assistant_spans(records, None)
    yield from itertools.chain.from_iterable(spans)


def cmd_evaluate(args) -> int:
    cfg = _Config(args.config)
    artifact = read_artifact(cfg.pick(args.artifact_dir, "artifact_dir"))
    report = evaluate_coverage(
        artifact,
        _generation_tokens(cfg, args),
        top_missing=cfg.pick(args.top_missing, "top_missing", default=50),
    )
    token_map_path = cfg.pick(args.token_map, "token_map")
    token_texts = load_token_map(token_map_path) if token_map_path else None
    out = Path(cfg.pick(args.out, "out", default=_out_dir(cfg, args) / "coverage_report.json"))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(
        json.dumps(coverage_report_to_dict(report, token_texts), indent=2) + "\n",
        encoding="utf-8",
    )
    print(
        f"tokens={report.total_tokens} freq_coverage={report.freq_coverage:.6f} "
        f"unique_coverage={report.unique_coverage:.6f} missing={len(report.missing_top)} "
        f"-> {out}"
    )
    return EXIT_OK


def cmd_curves(args) -> int:
    cfg = _Config(args.config)
    table = _load_table(cfg.pick(args.freq_table, "freq_table"))
    profile = _resolve_profile(cfg, args)
    curve = CoverageCurve.from_table(table)
    objective = _objective_config(cfg, args)
    ks = cfg.pick(args.ks, "ks")
    stride = cfg.pick(args.stride, "stride", default=None if ks else 1)
    points = emit_curves(curve, profile, objective, ks=ks, stride=None if ks else stride)
    out = Path(cfg.pick(args.out, "out", default=_out_dir(cfg, args) / "curves.csv"))
    out.parent.mkdir(parents=True, exist_ok=True)
    write_curves_csv(points, out)
    print(f"{len(points)} points -> {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _Config(args.config)
    profile = _resolve_profile(cfg, args)
    _, spans = _record_stream(cfg, args, vocab_size=profile.vocab_size)
    corpus = SpanCorpus.from_token_lists(
        _spans_per_record(spans), profile.vocab_size
    )
    objective = _objective_config(cfg, args)
    seed = cfg.pick(args.seed, "seed", default=0)
    seeds = cfg.pick(args.seeds, "seeds", default=[seed])
    sizes = cfg.pick(args.sizes, "sizes")
    if not sizes:
        raise ValueError("sweep requires --sizes")
    tpe_cfg = _tpe_config(cfg, args, seed)
    jobs = cfg.pick(args.jobs, "jobs", default=os.cpu_count() or 1)
    points = stability_sweep(
        corpus, sizes, seeds, profile, objective, tpe_cfg, jobs=jobs
    )
    out = Path(cfg.pick(args.out, "out", default=_out_dir(cfg, args) / "stability.csv"))
    out.parent.mkdir(parents=True, exist_ok=True)
    write_stability_csv(points, out)
    print(f"{len(points)} sweep points -> {out}")
    return EXIT_OK


def _spans_per_record(spans) -> Iterator[list[int]]:
    """Regroup a span stream into one flat token list per source record."""
    current_record = 0
    bucket: list[int] = []
    for span in spans:
        while spans.stats.records_read > current_record + 1:
            yield bucket
            bucket = []
            current_record += 1
        bucket.extend(span)
    # Flush the final record and any trailing span-less records.
    while current_record < spans.stats.records_read:
        yield bucket
        bucket = []
        current_record += 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vocab-pareto",
        description="Select a coverage/latency-optimal draft vocabulary and emit artifacts.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, help="seed for all randomness (default 0)")
    common.add_argument("--jobs", type=int, help="parallel workers where supported")
    common.add_argument("--out-dir", help="directory for output files (default .)")

    corpus_flags = argparse.ArgumentParser(add_help=False)
    corpus_flags.add_argument("--format", choices=["role_labeled", "raw_stream"])
    corpus_flags.add_argument(
        "--assistant-start", type=_int_list, metavar="IDS",
        help="comma-separated token ids opening an assistant span",
    )
    corpus_flags.add_argument(
        "--assistant-end", type=_int_list, metavar="IDS",
        help="comma-separated token ids closing an assistant span",
    )
    corpus_flags.add_argument(
        "--error-budget", type=float,
        help="tolerated malformed-line fraction before the read fails (default 0.01)",
    )

    objective_flags = argparse.ArgumentParser(add_help=False)
    objective_flags.add_argument("--alpha", type=float, help="coverage weight in [0,1] (default 0.5)")
    objective_flags.add_argument("--c-min", type=float, help="minimum coverage constraint (default 0.9)")
    objective_flags.add_argument("--k-min", type=int, help="smallest k searched (default 256)")
    objective_flags.add_argument("--k-max", type=int, help="largest k searched (default: full vocab)")
    objective_flags.add_argument("--penalty", type=float, help="score for infeasible trials (default -1)")

    tpe_flags = argparse.ArgumentParser(add_help=False)
    tpe_flags.add_argument("--trials", type=int, help="number of optimization trials (default 100)")
    tpe_flags.add_argument("--startup-trials", type=int, help="uniform-random warmup trials (default 10)")
    tpe_flags.add_argument("--candidates", type=int, help="proposal candidates per trial (default 24)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "count", parents=[common, corpus_flags],
        help="count assistant-span token frequencies into a table file",
    )
    p.add_argument("--corpus", help="JSONL corpus path")
    p.add_argument("--vocab-size", type=int, help="full vocabulary size V")
    p.add_argument("--profile", help="profile name or path (provides V if --vocab-size absent)")
    p.add_argument("--out", help="output table path (default OUT_DIR/freq_table.json)")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser(
        "optimize", parents=[common, objective_flags, tpe_flags],
        help="search for k* and write the study plus the trimmed artifact",
    )
    p.add_argument("--freq-table", help="frequency table JSON from `count`")
    p.add_argument("--profile", help="architecture profile name or path")
    p.add_argument("--exhaustive", action="store_true", help="scan every k instead of sampling")
    p.add_argument("--forced-tokens", type=_int_list, metavar="IDS",
                   help="token ids that must be kept (inside the k budget)")
    p.add_argument("--force", action="store_true", help="overwrite an existing artifact")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser(
        "trim", parents=[common, objective_flags],
        help="build an artifact at an explicit --k without optimization",
    )
    p.add_argument("--freq-table", help="frequency table JSON from `count`")
    p.add_argument("--profile", help="architecture profile name or path")
    p.add_argument("--k", type=int, help="draft vocabulary size to keep")
    p.add_argument("--forced-tokens", type=_int_list, metavar="IDS")
    p.add_argument("--force", action="store_true", help="overwrite an existing artifact")
    p.set_defaults(func=cmd_trim)

    p = sub.add_parser(
        "evaluate", parents=[common, corpus_flags],
        help="measure artifact coverage over held-out generations",
    )
    p.add_argument("--artifact-dir", help="directory holding artifact.json + buffers")
    p.add_argument("--generations", help="JSONL of generated tokens")
    p.add_argument("--top-missing", type=int, help="missing-token report length (default 50)")
    p.add_argument("--token-map", help="JSONL id->text map for readable missing tokens")
    p.add_argument("--out", help="report path (default OUT_DIR/coverage_report.json)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser(
        "curves", parents=[common, objective_flags],
        help="dump utility/Pareto curve points to CSV",
    )
    p.add_argument("--freq-table", help="frequency table JSON from `count`")
    p.add_argument("--profile", help="architecture profile name or path")
    p.add_argument("--stride", type=int, help="evaluate every stride-th k (default 1)")
    p.add_argument("--ks", type=_int_list, metavar="KS", help="explicit comma-separated k values")
    p.add_argument("--out", help="CSV path (default OUT_DIR/curves.csv)")
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser(
        "sweep", parents=[common, corpus_flags, objective_flags, tpe_flags],
        help="re-optimize on record subsamples of growing size",
    )
    p.add_argument("--corpus", help="JSONL corpus path")
    p.add_argument("--profile", help="architecture profile name or path")
    p.add_argument("--sizes", type=_int_list, metavar="NS", help="subsample record counts")
    p.add_argument("--seeds", type=_int_list, metavar="SEEDS", help="one sweep point per (size, seed)")
    p.add_argument("--out", help="CSV path (default OUT_DIR/stability.csv)")
    p.set_defaults(func=cmd_sweep)

    return parser


def _configure_logging() -> None:
    level_name = os.environ.get("VOCAB_PARETO_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleStudyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (HashMismatchError, InvariantViolationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except _FORMAT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
