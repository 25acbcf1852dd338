"""Trimmed-vocabulary artifacts with draft/target index buffers.

An artifact is three files in a directory:

* ``artifact.json`` — metadata plus sha256 checksums of both buffers.
* ``d2t.bin`` — draft index -> target token id, k unsigned 32-bit
  little-endian integers, strictly ascending.
* ``t2d.bin`` — target token id -> draft index, V signed 32-bit
  little-endian integers, -1 for tokens outside the draft vocabulary.

The buffers carry no header; lengths are implied by ``k`` and
``vocab_size`` in the JSON. Writes are atomic (temp file + rename) and an
existing artifact is only replaced when explicitly forced.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from ._version import __version__
from .errors import (
    HashMismatchError,
    InvariantViolationError,
    MissingFileError,
)
from .flops import ArchitectureProfile, latency_reduction
from .frequency import CoverageCurve, top_k_tokens

ARTIFACT_FORMAT_VERSION = 1
ARTIFACT_JSON = "artifact.json"
D2T_BIN = "d2t.bin"
T2D_BIN = "t2d.bin"


@dataclass(frozen=True)
class ArtifactMeta:
    """Provenance stamped into the artifact metadata."""

    corpus_fingerprint: str
    alpha: float
    c_min: float
    selected_by: str  # "tpe", "exhaustive", or "manual"
    tool_version: str = __version__


@dataclass(frozen=True, eq=False)
class VocabularyArtifact:
    k: int
    vocab_size: int
    d2t: np.ndarray  # uint32, length k, strictly ascending
    t2d: np.ndarray  # int32, length vocab_size, -1 where absent
    coverage: float
    reduction: float
    meta: ArtifactMeta

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VocabularyArtifact):
            return NotImplemented
        return (
            self.k == other.k
            and self.vocab_size == other.vocab_size
            and np.array_equal(self.d2t, other.d2t)
            and np.array_equal(self.t2d, other.t2d)
            and self.coverage == other.coverage
            and self.reduction == other.reduction
            and self.meta == other.meta
        )


def build_artifact(
    curve: CoverageCurve,
    profile: ArchitectureProfile,
    k: int,
    forced: Iterable[int] = (),
    meta: ArtifactMeta | None = None,
) -> VocabularyArtifact:
    """Materialize the k-token draft vocabulary with both index buffers.

    ``coverage`` is the occurrence mass of the kept set itself, so it stays
    correct when forced tokens displace frequent ones.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    kept = top_k_tokens(curve, k, forced)
    t2d = np.full(curve.vocab_size, -1, dtype=np.int32)
    t2d[kept] = np.arange(k, dtype=np.int32)
    if meta is None:
        meta = ArtifactMeta(corpus_fingerprint="", alpha=0.5, c_min=0.9, selected_by="manual")
    return VocabularyArtifact(
        k=k,
        vocab_size=curve.vocab_size,
        d2t=kept.astype(np.uint32),
        t2d=t2d,
        coverage=curve.mass_fraction(kept),
        reduction=latency_reduction(profile, k),
        meta=meta,
    )


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_artifact(
    artifact: VocabularyArtifact, out_dir: str | Path, *, force: bool = False
) -> dict[str, Path]:
    """Write the three artifact files; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / ARTIFACT_JSON
    if json_path.exists() and not force:
        raise FileExistsError(
            f"{json_path} already exists; pass force=True / --force to overwrite"
        )
    d2t_bytes = artifact.d2t.astype("<u4").tobytes()
    t2d_bytes = artifact.t2d.astype("<i4").tobytes()
    header = {
        "format_version": ARTIFACT_FORMAT_VERSION,
        "k": artifact.k,
        "vocab_size": artifact.vocab_size,
        "coverage": artifact.coverage,
        "reduction": artifact.reduction,
        "alpha": artifact.meta.alpha,
        "c_min": artifact.meta.c_min,
        "corpus_fingerprint": artifact.meta.corpus_fingerprint,
        "selected_by": artifact.meta.selected_by,
        "d2t_sha256": _sha256(d2t_bytes),
        "t2d_sha256": _sha256(t2d_bytes),
        "tool_version": artifact.meta.tool_version,
    }
    _atomic_write(out / D2T_BIN, d2t_bytes)
    _atomic_write(out / T2D_BIN, t2d_bytes)
    # JSON last: its checksums are the commit point for the whole artifact.
    _atomic_write(json_path, (json.dumps(header, indent=2, sort_keys=True) + "\n").encode())
    return {ARTIFACT_JSON: json_path, D2T_BIN: out / D2T_BIN, T2D_BIN: out / T2D_BIN}


_REQUIRED_KEYS = (
    "format_version",
    "k",
    "vocab_size",
    "coverage",
    "reduction",
    "alpha",
    "c_min",
    "corpus_fingerprint",
    "selected_by",
    "d2t_sha256",
    "t2d_sha256",
    "tool_version",
)


def read_artifact(artifact_dir: str | Path) -> VocabularyArtifact:
    """Load and fully verify an artifact: checksums first, then invariants."""
    adir = Path(artifact_dir)
    paths = {name: adir / name for name in (ARTIFACT_JSON, D2T_BIN, T2D_BIN)}
    for name, path in paths.items():
        if not path.exists():
            raise MissingFileError(f"artifact file missing: {path}")
    try:
        header = json.loads(paths[ARTIFACT_JSON].read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvariantViolationError("artifact.json parse", str(exc)) from None
    for key in _REQUIRED_KEYS:
        if key not in header:
            raise InvariantViolationError("artifact.json keys", f"missing {key!r}")
    if header["format_version"] != ARTIFACT_FORMAT_VERSION:
        raise InvariantViolationError(
            "format version", f"got {header['format_version']}"
        )
    k, vocab_size = header["k"], header["vocab_size"]
    d2t_bytes = paths[D2T_BIN].read_bytes()
    t2d_bytes = paths[T2D_BIN].read_bytes()
    for name, data, expected in (
        (D2T_BIN, d2t_bytes, header["d2t_sha256"]),
        (T2D_BIN, t2d_bytes, header["t2d_sha256"]),
    ):
        actual = _sha256(data)
        if actual != expected:
            raise HashMismatchError(name, expected, actual)
    if len(d2t_bytes) != 4 * k:
        raise InvariantViolationError("d2t length", f"{len(d2t_bytes)} bytes for k={k}")
    if len(t2d_bytes) != 4 * vocab_size:
        raise InvariantViolationError(
            "t2d length", f"{len(t2d_bytes)} bytes for vocab_size={vocab_size}"
        )
    d2t = np.frombuffer(d2t_bytes, dtype="<u4").astype(np.uint32)
    t2d = np.frombuffer(t2d_bytes, dtype="<i4").astype(np.int32)
    _verify_buffers(k, vocab_size, d2t, t2d)
    return VocabularyArtifact(
        k=k,
        vocab_size=vocab_size,
        d2t=d2t,
        t2d=t2d,
        coverage=header["coverage"],
        reduction=header["reduction"],
        meta=ArtifactMeta(
            corpus_fingerprint=header["corpus_fingerprint"],
            alpha=header["alpha"],
            c_min=header["c_min"],
            selected_by=header["selected_by"],
            tool_version=header["tool_version"],
        ),
    )


def _verify_buffers(k: int, vocab_size: int, d2t: np.ndarray, t2d: np.ndarray) -> None:
    if not 1 <= k <= vocab_size:
        raise InvariantViolationError("k range", f"k={k}, vocab_size={vocab_size}")
    if d2t.size and int(d2t.max()) >= vocab_size:
        raise InvariantViolationError("d2t range", "token id >= vocab_size")
    if np.any(np.diff(d2t.astype(np.int64)) <= 0):
        raise InvariantViolationError("d2t ascending")
    if not np.array_equal(t2d[d2t], np.arange(k, dtype=np.int32)):
        raise InvariantViolationError("inverse", "t2d[d2t[i]] != i")
    if int((t2d >= 0).sum()) != k:
        raise InvariantViolationError(
            "t2d kept count", f"{int((t2d >= 0).sum())} non-negative entries for k={k}"
        )
    if t2d.size and (int(t2d.min()) < -1 or int(t2d.max()) >= k):
        raise InvariantViolationError("t2d range", "draft index outside [-1, k)")
