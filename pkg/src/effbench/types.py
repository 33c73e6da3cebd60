"""Domain types shared by every other module.

All types are immutable after construction and validate their invariants in
``__post_init__``, so any instance that exists is a valid one. Metric values
live on their native scale (percentage points, e.g. a cutoff of 91.0), never
fractions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Mapping, Optional, Tuple

from .errors import UsageError

METRIC_SCALE_MAX = 100.0


class MetricKind(str, Enum):
    ACCURACY = "accuracy"
    ENTITY_F1 = "entity_f1"
    MNLI_AVG_ACCURACY = "mnli_avg_accuracy"


class Phase(str, Enum):
    PRETRAIN = "pretrain"
    FINETUNE = "finetune"
    INFERENCE = "inference"


class RunStatus(str, Enum):
    REACHED = "reached"
    NOT_REACHED = "not_reached"
    ABORTED = "aborted"


class ScoreBasis(str, Enum):
    TIME = "time"
    COST = "cost"


class HardwareKind(str, Enum):
    TPU_V3 = "tpu_v3"
    GPU_V100 = "gpu_v100"
    CUSTOM = "custom"


DEFAULT_EPOCH_BUDGET = 5


@dataclass(frozen=True)
class TaskSpec:
    """One benchmark task: which metric, what cutoff, how many epochs allowed."""

    name: str
    metric_kind: MetricKind
    cutoff: float
    epoch_budget: int = DEFAULT_EPOCH_BUDGET
    train_size: int = 0
    dev_size: int = 0

    def __post_init__(self) -> None:
        if not self.name or any(c.isspace() or c == "/" for c in self.name):
            raise UsageError(f"task name must be a path-safe identifier, got {self.name!r}")
        if not isinstance(self.metric_kind, MetricKind):
            raise UsageError(f"metric_kind must be a MetricKind, got {self.metric_kind!r}")
        if not (0.0 < self.cutoff < METRIC_SCALE_MAX):
            raise UsageError(
                f"cutoff must be strictly between 0 and {METRIC_SCALE_MAX:g}, got {self.cutoff!r}"
            )
        if self.epoch_budget < 1:
            raise UsageError(f"epoch_budget must be >= 1, got {self.epoch_budget!r}")
        if self.train_size < 0 or self.dev_size < 0:
            raise UsageError("train_size and dev_size must be nonnegative")


@dataclass(frozen=True)
class HardwareProfile:
    """Billing description of the hardware a run is charged against.

    ``unit_count`` is the number of billing units; for TPU profiles several
    chips form one unit (``chips_per_unit``), so the chip-based cost formula
    total_chips / chips_per_unit * price and the unit-based one
    unit_count * price are the same number by construction.
    """

    kind: HardwareKind
    unit_count: int
    unit_price_per_hour: float
    chips_per_unit: int = 1

    def __post_init__(self) -> None:
        if self.unit_count < 1:
            raise UsageError(f"unit_count must be >= 1, got {self.unit_count!r}")
        if self.unit_price_per_hour < 0:
            raise UsageError(f"unit_price_per_hour must be >= 0, got {self.unit_price_per_hour!r}")
        if self.chips_per_unit < 1:
            raise UsageError(f"chips_per_unit must be >= 1, got {self.chips_per_unit!r}")

    @property
    def total_chips(self) -> int:
        return self.unit_count * self.chips_per_unit

    @classmethod
    def from_tpu_chips(
        cls, chips: int, unit_price_per_hour: float = 8.0, chips_per_unit: int = 4
    ) -> "HardwareProfile":
        if chips < 1 or chips % chips_per_unit != 0:
            raise UsageError(
                f"chip count must be a positive multiple of chips_per_unit "
                f"({chips_per_unit}), got {chips}"
            )
        return cls(
            kind=HardwareKind.TPU_V3,
            unit_count=chips // chips_per_unit,
            unit_price_per_hour=unit_price_per_hour,
            chips_per_unit=chips_per_unit,
        )


@dataclass(frozen=True)
class MeasurementPoint:
    elapsed_seconds: float
    metric_value: float
    epoch_fraction: float

    def __post_init__(self) -> None:
        if self.elapsed_seconds < 0:
            raise UsageError("elapsed_seconds must be nonnegative")
        if not math.isfinite(self.metric_value):
            raise UsageError("metric_value must be finite")
        if self.epoch_fraction < 0:
            raise UsageError("epoch_fraction must be nonnegative")


@dataclass(frozen=True)
class MeasurementSeries:
    """Time-stamped dev evaluations of one run, ordered by elapsed time."""

    points: Tuple[MeasurementPoint, ...]
    metric_kind: MetricKind

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple(self.points))
        prev: Optional[MeasurementPoint] = None
        for p in self.points:
            if prev is not None:
                if p.elapsed_seconds <= prev.elapsed_seconds:
                    raise UsageError(
                        f"elapsed_seconds must be strictly increasing "
                        f"({prev.elapsed_seconds} -> {p.elapsed_seconds})"
                    )
                if p.epoch_fraction < prev.epoch_fraction:
                    raise UsageError(
                        f"epoch_fraction must be nondecreasing "
                        f"({prev.epoch_fraction} -> {p.epoch_fraction})"
                    )
            prev = p

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[MeasurementPoint]:
        return iter(self.points)

    @property
    def max_epoch_fraction(self) -> float:
        return max((p.epoch_fraction for p in self.points), default=0.0)


@dataclass(frozen=True)
class PhaseResult:
    """Metered outcome of one phase of one run.

    ``metered_seconds`` excludes dev-evaluation pauses, ``wall_seconds``
    includes them. For inference runs ``latency_ms`` carries the mean
    per-instance latency and ``crossing_point`` is (metered_seconds,
    latency_ms) so the reached-iff-crossing invariant holds uniformly.
    """

    phase: Phase
    status: RunStatus
    metered_seconds: float
    wall_seconds: float
    cost_usd: float
    crossing_point: Optional[Tuple[float, float]] = None
    latency_ms: Optional[float] = None

    def __post_init__(self) -> None:
        if self.metered_seconds < 0 or self.wall_seconds < 0:
            raise UsageError("durations must be nonnegative")
        if self.metered_seconds > self.wall_seconds + 1e-9:
            raise UsageError(
                f"metered_seconds ({self.metered_seconds}) must not exceed "
                f"wall_seconds ({self.wall_seconds})"
            )
        if self.cost_usd < 0:
            raise UsageError("cost_usd must be nonnegative")
        if (self.status is RunStatus.REACHED) != (self.crossing_point is not None):
            raise UsageError("crossing_point must be present exactly when status is reached")


@dataclass(frozen=True)
class TaskScore:
    """Normalized score of one model on one task."""

    raw_value: Optional[float]
    score: float
    display: float
    status: RunStatus

    def __post_init__(self) -> None:
        if self.score < 0 or self.display < 0:
            raise UsageError("scores must be nonnegative")
        if (self.status is not RunStatus.REACHED) and (self.score != 0.0 or self.display != 0.0):
            raise UsageError("score must be 0 exactly when status is not reached")
        if self.status is RunStatus.REACHED and self.score == 0.0:
            raise UsageError("reached tasks must have a positive score")


@dataclass(frozen=True)
class ScoreCard:
    """Per-task normalized scores plus the overall score for one model.

    ``overall_score`` is the displayed overall: the sum of the per-task
    scores after display rounding. ``overall_exact`` keeps full precision.
    """

    model_name: str
    basis: ScoreBasis
    per_task: Mapping[str, TaskScore]
    overall_score: float
    overall_exact: float
    phase: Phase = Phase.FINETUNE

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_task", dict(self.per_task))
        # displayed overall must be the sum of displayed per-task scores
        from decimal import Decimal

        total = sum((Decimal(str(s.display)) for s in self.per_task.values()), Decimal(0))
        if float(total) != self.overall_score:
            raise UsageError(
                f"overall_score {self.overall_score} != sum of displayed scores {float(total)}"
            )

    @property
    def task_names(self) -> Tuple[str, ...]:
        return tuple(self.per_task.keys())
