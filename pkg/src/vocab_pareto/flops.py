"""Architecture-aware FLOPs model for single-decoder-layer draft models.

A draft model of this shape has three fixed-cost components per forward
pass (feature fusion, self-attention, feed-forward) and one component
whose cost scales with the vocabulary size k: the LM head, a linear
projection from the hidden dimension d costing exactly 2*d*k FLOPs.
The latency-reduction proxy compares the total at k against the total
at the full vocabulary V.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import KTooLargeError


def feature_fusion_flops(hidden_dim: int, fused_layers: int) -> int:
    """FLOPs of projecting `fused_layers` concatenated hidden states back to
    the hidden dimension (2 * in_features * out_features for a linear layer)."""
    return 2 * (fused_layers * hidden_dim) * hidden_dim


@dataclass(frozen=True)
class ArchitectureProfile:
    """Fixed description of a draft-model architecture.

    The attention and feed-forward FLOPs are declared values (measured for
    the reference stack); they are not derivable from layer shapes alone,
    so profiles carry them as opaque constants.
    """

    name: str
    hidden_dim: int
    vocab_size: int
    fused_layers: int
    flops_feature_fusion: int
    flops_attention: int
    flops_ffn: int

    def __post_init__(self) -> None:
        for field_name in (
            "hidden_dim",
            "vocab_size",
            "fused_layers",
            "flops_feature_fusion",
            "flops_attention",
            "flops_ffn",
        ):
            value = getattr(self, field_name)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise ValueError(f"profile field {field_name} must be a positive integer, got {value!r}")

    @classmethod
    def from_config(cls, cfg: dict) -> "ArchitectureProfile":
        """Build a profile from its JSON config form.

        The ``flops`` sub-object must declare ``attention`` and ``ffn``;
        ``feature_fusion`` may be omitted, in which case it is computed from
        the hidden dimension and the number of fused layers.
        """
        try:
            name = cfg["name"]
            hidden_dim = cfg["hidden_dim"]
            vocab_size = cfg["vocab_size"]
            fused_layers = cfg["fused_layers"]
        except KeyError as exc:
            raise ValueError(f"profile config missing required key {exc}") from None
        flops = cfg.get("flops", {})
        if "attention" not in flops or "ffn" not in flops:
            raise ValueError(
                "profile config must declare flops.attention and flops.ffn explicitly"
            )
        fusion = flops.get("feature_fusion")
        if fusion is None:
            fusion = feature_fusion_flops(hidden_dim, fused_layers)
        return cls(
            name=name,
            hidden_dim=hidden_dim,
            vocab_size=vocab_size,
            fused_layers=fused_layers,
            flops_feature_fusion=fusion,
            flops_attention=flops["attention"],
            flops_ffn=flops["ffn"],
        )

    def to_config(self) -> dict:
        return {
            "name": self.name,
            "hidden_dim": self.hidden_dim,
            "vocab_size": self.vocab_size,
            "fused_layers": self.fused_layers,
            "flops": {
                "feature_fusion": self.flops_feature_fusion,
                "attention": self.flops_attention,
                "ffn": self.flops_ffn,
            },
        }


_LLAMA3_8B_EAGLE3 = ArchitectureProfile(
    name="llama3-8b-eagle3",
    hidden_dim=4096,
    vocab_size=128_256,
    fused_layers=3,
    flops_feature_fusion=feature_fusion_flops(4096, 3),  # 100,663,296
    flops_attention=436_200_000,
    flops_ffn=50_300_000,
)

BUILTIN_PROFILES: dict[str, ArchitectureProfile] = {
    _LLAMA3_8B_EAGLE3.name: _LLAMA3_8B_EAGLE3,
}


def load_profile(ref: str | Path) -> ArchitectureProfile:
    """Resolve a profile reference: a built-in name or a JSON config path."""
    if isinstance(ref, str) and ref in BUILTIN_PROFILES:
        return BUILTIN_PROFILES[ref]
    path = Path(ref)
    if not path.exists():
        raise FileNotFoundError(
            f"unknown profile {ref!r}: not a built-in "
            f"({', '.join(sorted(BUILTIN_PROFILES))}) and no such file"
        )
    with open(path, encoding="utf-8") as fh:
        return ArchitectureProfile.from_config(json.load(fh))


@dataclass(frozen=True)
class FlopsBreakdown:
    """Per-component FLOPs at a given draft vocabulary size."""

    feature_fusion: int
    attention: int
    ffn: int
    lm_head: int
    total: int
    fractions: dict[str, float]


def _check_k(profile: ArchitectureProfile, k: int) -> None:
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    if k > profile.vocab_size:
        raise KTooLargeError(f"k={k} exceeds vocab_size={profile.vocab_size}")


def fixed_flops(profile: ArchitectureProfile) -> int:
    """Per-pass cost of everything except the LM head."""
    return profile.flops_feature_fusion + profile.flops_attention + profile.flops_ffn


def lm_head_flops(profile: ArchitectureProfile, k: int) -> int:
    """LM-head cost at vocabulary size k: exactly 2 * hidden_dim * k."""
    _check_k(profile, k)
    return 2 * profile.hidden_dim * k


def latency_reduction_many(profile: ArchitectureProfile, ks: np.ndarray) -> np.ndarray:
    """Vectorized relative FLOPs saving versus the full vocabulary.

    reduction(k) = 1 - (F_fixed + 2dk) / (F_fixed + 2dV), strictly
    decreasing in k and zero at k = V.
    """
    ks = np.asarray(ks, dtype=np.int64)
    if ks.size and int(ks.min()) < 0:
        raise ValueError("k must be non-negative")
    if ks.size and int(ks.max()) > profile.vocab_size:
        raise KTooLargeError(
            f"k={int(ks.max())} exceeds vocab_size={profile.vocab_size}"
        )
    fixed = fixed_flops(profile)
    denom = np.float64(fixed + 2 * profile.hidden_dim * profile.vocab_size)
    numer = fixed + 2 * profile.hidden_dim * ks
    return 1.0 - numer / denom


def latency_reduction(profile: ArchitectureProfile, k: int) -> float:
    return float(latency_reduction_many(profile, np.array([k], dtype=np.int64))[0])


def breakdown(profile: ArchitectureProfile, k: int) -> FlopsBreakdown:
    """Component FLOPs and their fractions of the total at vocabulary size k."""
    head = lm_head_flops(profile, k)
    total = fixed_flops(profile) + head
    return FlopsBreakdown(
        feature_fusion=profile.flops_feature_fusion,
        attention=profile.flops_attention,
        ffn=profile.flops_ffn,
        lm_head=head,
        total=total,
        fractions={
            "feature_fusion": profile.flops_feature_fusion / total,
            "attention": profile.flops_attention / total,
            "ffn": profile.flops_ffn / total,
            "lm_head": head / total,
        },
    )
