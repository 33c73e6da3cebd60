"""Normalized efficiency scores and multi-task scorecards.

A task score is reference_value / model_value (higher = more efficient), so
the reference model scores exactly 1.00 per task. Scores are displayed
rounded half-up to two decimals, and the displayed overall is the sum of the
*rounded* per-task scores; full-precision values are kept alongside.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Dict, Mapping, Optional, Sequence

from .errors import UsageError
from .types import Phase, PhaseResult, RunStatus, ScoreBasis, ScoreCard, TaskScore


def display_round(value: float, places: int = 2) -> float:
    """Round half-up to ``places`` decimals (display convention for scores)."""
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def task_score(reference_value: float, model_value: Optional[float]) -> float:
    """reference / model ratio; 0.0 when the model never reached the cutoff."""
    if reference_value <= 0:
        raise UsageError(f"reference_value must be positive, got {reference_value!r}")
    if model_value is None:
        return 0.0
    if model_value <= 0:
        raise UsageError(f"model_value must be positive, got {model_value!r}")
    return reference_value / model_value


def overall_score(per_task_scores: Sequence[float]) -> float:
    """Sum of per-task scores as displayed (exact decimal summation)."""
    total = sum((Decimal(repr(s)) for s in per_task_scores), Decimal(0))
    return float(total)


@dataclass(frozen=True)
class ReferenceEntry:
    reference_seconds: float
    reference_cost_usd: Optional[float] = None

    def __post_init__(self) -> None:
        if self.reference_seconds <= 0:
            raise UsageError("reference_seconds must be strictly positive")
        if self.reference_cost_usd is not None and self.reference_cost_usd <= 0:
            raise UsageError("reference_cost_usd must be strictly positive when present")

    def value(self, basis: ScoreBasis) -> float:
        if basis is ScoreBasis.TIME:
            return self.reference_seconds
        if self.reference_cost_usd is None:
            raise UsageError("no reference cost configured for cost-basis scoring")
        return self.reference_cost_usd


@dataclass(frozen=True)
class ReferenceBaseline:
    """The reference model's raw value per benchmark task.

    For inference baselines ``reference_seconds`` holds the mean per-instance
    latency in milliseconds; only ratios ever matter, so the unit just has to
    match the candidate's.
    """

    model_name: str
    per_task: Mapping[str, ReferenceEntry]

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_task", dict(self.per_task))
        if not self.per_task:
            raise UsageError("reference baseline must cover at least one task")

    def require_tasks(self, task_names: Sequence[str]) -> None:
        missing = [t for t in task_names if t not in self.per_task]
        if missing:
            raise UsageError(f"reference baseline missing tasks: {', '.join(missing)}")


def _raw_value(result: PhaseResult, basis: ScoreBasis) -> Optional[float]:
    if result.status is not RunStatus.REACHED:
        return None
    if basis is ScoreBasis.COST:
        return result.cost_usd
    if result.phase is Phase.INFERENCE:
        return result.latency_ms
    return result.metered_seconds


def build_scorecard(
    model_name: str,
    results: Mapping[str, PhaseResult],
    reference: ReferenceBaseline,
    basis: ScoreBasis,
) -> ScoreCard:
    """Score a model's per-task results against the reference baseline.

    Tasks whose status is not ``reached`` score 0; every baseline task must
    have a result.
    """
    missing = [t for t in reference.per_task if t not in results]
    if missing:
        raise UsageError(f"missing results for tasks: {', '.join(sorted(missing))}")
    reference.require_tasks(list(results.keys()))

    per_task: Dict[str, TaskScore] = {}
    phase = next(iter(results.values())).phase if results else Phase.FINETUNE
    for name, result in results.items():
        raw = _raw_value(result, basis)
        score = task_score(reference.per_task[name].value(basis), raw)
        per_task[name] = TaskScore(
            raw_value=raw,
            score=score,
            display=display_round(score),
            status=result.status,
        )
    displays = [s.display for s in per_task.values()]
    return ScoreCard(
        model_name=model_name,
        basis=basis,
        per_task=per_task,
        overall_score=overall_score(displays),
        overall_exact=sum(s.score for s in per_task.values()),
        phase=phase,
    )


def scorecard_from_raw(
    model_name: str,
    raw_values: Mapping[str, Optional[float]],
    reference: ReferenceBaseline,
    basis: ScoreBasis = ScoreBasis.TIME,
    phase: Phase = Phase.FINETUNE,
) -> ScoreCard:
    """Score bare raw values (None = never reached); used for reported tables."""
    reference.require_tasks(list(raw_values.keys()))
    missing = [t for t in reference.per_task if t not in raw_values]
    if missing:
        raise UsageError(f"missing results for tasks: {', '.join(sorted(missing))}")
    per_task: Dict[str, TaskScore] = {}
    for name, raw in raw_values.items():
        score = task_score(reference.per_task[name].value(basis), raw)
        status = RunStatus.REACHED if raw is not None else RunStatus.NOT_REACHED
        per_task[name] = TaskScore(
            raw_value=raw, score=score, display=display_round(score), status=status
        )
    return ScoreCard(
        model_name=model_name,
        basis=basis,
        per_task=per_task,
        overall_score=overall_score([s.display for s in per_task.values()]),
        overall_exact=sum(s.score for s in per_task.values()),
        phase=phase,
    )
