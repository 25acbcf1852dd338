"""Coverage/latency utility and its constraint-penalized form.

utility(k)  = alpha * coverage(k) + (1 - alpha) * reduction(k)
penalized(k) = utility(k) if coverage(k) >= c_min else penalty_value

The penalty default of -1 strictly separates infeasible trials from every
feasible one, since the utility of a feasible trial always lies in [0, 1].
The alpha and c_min defaults are ordinary starting points, not calibrated
values; set them explicitly for any result you intend to compare.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import KOutOfBoundsError, KTooLargeError
from .flops import ArchitectureProfile, latency_reduction_many
from .frequency import CoverageCurve


@dataclass(frozen=True)
class ObjectiveConfig:
    """Weights and search bounds for the scalarized objective.

    ``k_max=None`` means "the profile's full vocabulary", resolved via
    :meth:`bounds_for` when a profile is in hand.
    """

    alpha: float = 0.5
    c_min: float = 0.9
    k_min: int = 256
    k_max: int | None = None
    penalty_value: float = -1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.c_min <= 1.0:
            raise ValueError(f"c_min must be in [0, 1], got {self.c_min}")
        if self.k_min < 1:
            raise ValueError(f"k_min must be >= 1, got {self.k_min}")
        if self.k_max is not None and self.k_max < self.k_min:
            raise ValueError(f"k_max={self.k_max} is below k_min={self.k_min}")

    def bounds_for(self, profile: ArchitectureProfile) -> tuple[int, int]:
        k_max = self.k_max if self.k_max is not None else profile.vocab_size
        if k_max > profile.vocab_size:
            raise KTooLargeError(
                f"k_max={k_max} exceeds vocab_size={profile.vocab_size}"
            )
        if self.k_min > k_max:
            raise ValueError(
                f"k_min={self.k_min} exceeds k_max={k_max} for profile {profile.name!r}"
            )
        return self.k_min, k_max


@dataclass(frozen=True)
class TrialEvaluation:
    k: int
    coverage: float
    reduction: float
    utility: float
    feasible: bool
    penalized_utility: float


def evaluate_many(
    curve: CoverageCurve,
    profile: ArchitectureProfile,
    cfg: ObjectiveConfig,
    ks: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized objective over candidate k values.

    Returns (coverage, reduction, utility, feasible, penalized_utility)
    arrays aligned with ``ks``. This is the single evaluation code path;
    the scalar form wraps it so repeated evaluations are bit-identical.
    """
    ks = np.asarray(ks, dtype=np.int64)
    k_min, k_max = cfg.bounds_for(profile)
    if ks.size:
        lo, hi = int(ks.min()), int(ks.max())
        if lo < k_min or hi > k_max:
            raise KOutOfBoundsError(
                f"k must lie in [{k_min}, {k_max}], got range [{lo}, {hi}]"
            )
    coverage = curve.coverage_at_many(ks)
    reduction = latency_reduction_many(profile, ks)
    utility = cfg.alpha * coverage + (1.0 - cfg.alpha) * reduction
    feasible = coverage >= cfg.c_min
    penalized = np.where(feasible, utility, cfg.penalty_value)
    return coverage, reduction, utility, feasible, penalized


def utility(
    curve: CoverageCurve,
    profile: ArchitectureProfile,
    cfg: ObjectiveConfig,
    k: int,
) -> TrialEvaluation:
    """Evaluate one candidate k; pure and deterministic."""
    coverage, reduction, util, feasible, penalized = evaluate_many(
        curve, profile, cfg, np.array([k], dtype=np.int64)
    )
    return TrialEvaluation(
        k=int(k),
        coverage=float(coverage[0]),
        reduction=float(reduction[0]),
        utility=float(util[0]),
        feasible=bool(feasible[0]),
        penalized_utility=float(penalized[0]),
    )


def penalized_utility(evaluation: TrialEvaluation, penalty_value: float = -1.0) -> float:
    """The constraint-aware score: utility when feasible, else the penalty."""
    return evaluation.utility if evaluation.feasible else penalty_value
