"""Sequential model-based search over integer k, plus an exhaustive oracle.

The sampler keeps two kernel-density models of the trial history: one over
the k values of the best trials so far ("good"), one over the rest ("bad").
Each proposal draws candidates from the good density and keeps the one with
the highest good/bad density ratio, a standard proxy for expected
improvement. Infeasible trials carry the penalty score and take part in the
split like any other trial, which is what steers the search back into the
feasible region.

Because coverage lookups are O(1), the exhaustive scan over every integer k
in range is linear and serves as the validation oracle for the sampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy.special import logsumexp, ndtr, ndtri

from .errors import InfeasibleStudyError
from .flops import ArchitectureProfile
from .frequency import CoverageCurve
from .objective import ObjectiveConfig, TrialEvaluation, evaluate_many, utility

SampledBy = Literal["startup_random", "tpe", "exhaustive"]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def default_gamma(n: int) -> int:
    """Size of the "good" split for a history of n trials: min(ceil(n/10), 25)."""
    return min(math.ceil(0.1 * n), 25)


@dataclass(frozen=True)
class TpeConfig:
    n_trials: int = 100
    n_startup_trials: int = 10
    n_candidates: int = 24
    rng_seed: int = 0
    gamma_fn: Callable[[int], int] = default_gamma

    def __post_init__(self) -> None:
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if not 0 <= self.n_startup_trials < self.n_trials:
            raise ValueError("n_startup_trials must satisfy 0 <= n_startup < n_trials")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")


@dataclass(frozen=True)
class TrialRecord:
    index: int
    k: int
    evaluation: TrialEvaluation
    sampled_by: SampledBy


@dataclass(frozen=True)
class StudyResult:
    trials: list[TrialRecord]
    best: TrialRecord

    @property
    def k_star(self) -> int:
        return self.best.k


class _ParzenEstimator:
    """Truncated-Gaussian mixture over [low, high] with a uniform prior component.

    Each observation contributes one Gaussian centered at its value. The
    bandwidth is the larger of the two neighbor distances in the sorted
    observations (the full width for a lone observation), clipped to
    [1% of width, width] so repeated values never collapse the kernel.
    All n+1 components, the uniform prior included, share equal weight
    1/(n+1); the prior keeps a floor of exploration mass everywhere.
    """

    def __init__(self, observations: np.ndarray, low: float, high: float) -> None:
        self._low = low
        self._high = high
        self._width = high - low
        obs = np.sort(np.asarray(observations, dtype=np.float64))
        n = obs.size
        if n == 0:
            mus = np.empty(0)
            sigmas = np.empty(0)
        elif n == 1:
            mus = obs
            sigmas = np.array([self._width])
        else:
            gaps = np.diff(obs)
            left = np.concatenate(([gaps[0]], gaps))
            right = np.concatenate((gaps, [gaps[-1]]))
            mus = obs
            sigmas = np.maximum(left, right)
        if n:
            sigmas = np.clip(sigmas, 0.01 * self._width, self._width)
        self._mus = mus
        self._sigmas = sigmas
        self._n_components = n + 1  # Gaussians plus the uniform prior
        if n:
            self._cdf_low = ndtr((low - mus) / sigmas)
            self._cdf_high = ndtr((high - mus) / sigmas)
        else:
            self._cdf_low = np.empty(0)
            self._cdf_high = np.empty(0)

    def sample(self, rng: np.random.Generator, n_samples: int) -> np.ndarray:
        """Draw samples via two uniforms each: component index, then position."""
        n_obs = self._mus.size
        u_component = rng.random(n_samples)
        u_position = rng.random(n_samples)
        component = np.floor(u_component * self._n_components).astype(np.int64)
        xs = np.empty(n_samples)
        prior = component == n_obs
        xs[prior] = self._low + u_position[prior] * self._width
        gaussian = ~prior
        if gaussian.any():
            idx = component[gaussian]
            span = self._cdf_high[idx] - self._cdf_low[idx]
            p = self._cdf_low[idx] + u_position[gaussian] * span
            xs[gaussian] = self._mus[idx] + self._sigmas[idx] * ndtri(p)
        return np.clip(xs, self._low, self._high)

    def log_pdf(self, xs: np.ndarray) -> np.ndarray:
        n_obs = self._mus.size
        parts = np.empty((xs.size, self._n_components))
        parts[:, n_obs] = -math.log(self._width)
        if n_obs:
            t = (xs[:, None] - self._mus[None, :]) / self._sigmas[None, :]
            parts[:, :n_obs] = (
                -0.5 * t * t
                - np.log(self._sigmas * _SQRT_2PI)[None, :]
                - np.log(self._cdf_high - self._cdf_low)[None, :]
            )
        return logsumexp(parts, axis=1) - math.log(self._n_components)


def _split_history(
    trials: list[TrialRecord], n_below: int
) -> tuple[np.ndarray, np.ndarray]:
    """Partition trial k values into the top-n_below by penalized utility and
    the rest. Ties resolve toward earlier trials, deterministically."""
    order = sorted(
        range(len(trials)),
        key=lambda i: (-trials[i].evaluation.penalized_utility, i),
    )
    good = np.array([trials[i].k for i in order[:n_below]], dtype=np.float64)
    bad = np.array([trials[i].k for i in order[n_below:]], dtype=np.float64)
    return good, bad


def _propose(
    rng: np.random.Generator,
    trials: list[TrialRecord],
    k_min: int,
    k_max: int,
    cfg: TpeConfig,
) -> int:
    good, bad = _split_history(trials, cfg.gamma_fn(len(trials)))
    low, high = float(k_min), float(k_max)
    density_good = _ParzenEstimator(good, low, high)
    density_bad = _ParzenEstimator(bad, low, high)
    samples = density_good.sample(rng, cfg.n_candidates)
    candidates = np.clip(np.rint(samples), k_min, k_max)
    score = density_good.log_pdf(candidates) - density_bad.log_pdf(candidates)
    return int(candidates[int(np.argmax(score))])


def _pick_best(trials: list[TrialRecord]) -> TrialRecord:
    # Maximal penalized utility; ties -> smaller k, then earlier trial.
    return max(
        trials,
        key=lambda t: (t.evaluation.penalized_utility, -t.k, -t.index),
    )


def optimize_tpe(
    curve: CoverageCurve,
    profile: ArchitectureProfile,
    obj: ObjectiveConfig,
    tpe: TpeConfig,
) -> StudyResult:
    """Run the seeded sequential search and return the full trial history.

    The first ``n_startup_trials`` k values come straight from the seeded
    uniform integer generator over [k_min, k_max]; every later trial is a
    density-ratio proposal. Identical inputs and seed reproduce the history
    exactly. Raises :class:`InfeasibleStudyError` when no trial ever met the
    coverage constraint.
    """
    k_min, k_max = obj.bounds_for(profile)
    rng = np.random.default_rng(tpe.rng_seed)
    trials: list[TrialRecord] = []
    for i in range(tpe.n_trials):
        if k_min == k_max:
            k = k_min
            by: SampledBy = "startup_random" if i < tpe.n_startup_trials else "tpe"
        elif i < tpe.n_startup_trials:
            k = int(rng.integers(k_min, k_max + 1))
            by = "startup_random"
        else:
            k = _propose(rng, trials, k_min, k_max, tpe)
            by = "tpe"
        trials.append(TrialRecord(index=i, k=k, evaluation=utility(curve, profile, obj, k), sampled_by=by))
    best = _pick_best(trials)
    if not best.evaluation.feasible:
        raise InfeasibleStudyError(
            f"no trial reached coverage >= {obj.c_min} within k in [{k_min}, {k_max}]",
            max_coverage=max(t.evaluation.coverage for t in trials),
        )
    return StudyResult(trials=trials, best=best)


def optimize_exhaustive(
    curve: CoverageCurve,
    profile: ArchitectureProfile,
    obj: ObjectiveConfig,
    *,
    keep_trials: bool = False,
) -> StudyResult:
    """Evaluate every integer k in [k_min, k_max] and return the exact argmax.

    Ties resolve to the smallest k. By default only the winning evaluation
    is materialized as a trial record (the scan itself is vectorized);
    pass ``keep_trials=True`` to get a record per k, e.g. for curve dumps.
    """
    k_min, k_max = obj.bounds_for(profile)
    ks = np.arange(k_min, k_max + 1, dtype=np.int64)
    coverage, reduction, util, feasible, penalized = evaluate_many(
        curve, profile, obj, ks
    )
    if not feasible.any():
        raise InfeasibleStudyError(
            f"no k in [{k_min}, {k_max}] reaches coverage >= {obj.c_min}",
            max_coverage=float(coverage.max()),
        )
    best_i = int(np.argmax(penalized))  # first max -> smallest k

    def record(i: int) -> TrialRecord:
        return TrialRecord(
            index=i,
            k=int(ks[i]),
            evaluation=TrialEvaluation(
                k=int(ks[i]),
                coverage=float(coverage[i]),
                reduction=float(reduction[i]),
                utility=float(util[i]),
                feasible=bool(feasible[i]),
                penalized_utility=float(penalized[i]),
            ),
            sampled_by="exhaustive",
        )

    best = record(best_i)
    trials = [record(i) for i in range(len(ks))] if keep_trials else [best]
    return StudyResult(trials=trials, best=best)


def _trial_dict(t: TrialRecord) -> dict:
    return {
        "index": t.index,
        "k": t.k,
        "coverage": t.evaluation.coverage,
        "reduction": t.evaluation.reduction,
        "utility": t.evaluation.utility,
        "feasible": t.evaluation.feasible,
        "sampled_by": t.sampled_by,
    }


def study_to_dict(
    study: StudyResult, obj: ObjectiveConfig, tpe: TpeConfig | None = None
) -> dict:
    """JSON-ready study summary: k_star, best trial, history, and configs."""
    config: dict = {
        "objective": {
            "alpha": obj.alpha,
            "c_min": obj.c_min,
            "k_min": obj.k_min,
            "k_max": obj.k_max,
            "penalty_value": obj.penalty_value,
        }
    }
    if tpe is not None:
        config["tpe"] = {
            "n_trials": tpe.n_trials,
            "n_startup_trials": tpe.n_startup_trials,
            "n_candidates": tpe.n_candidates,
            "rng_seed": tpe.rng_seed,
            "gamma": "min(ceil(0.1*n), 25)" if tpe.gamma_fn is default_gamma else "custom",
        }
    return {
        "k_star": study.k_star,
        "best": _trial_dict(study.best),
        "trials": [_trial_dict(t) for t in study.trials],
        "config": config,
    }
