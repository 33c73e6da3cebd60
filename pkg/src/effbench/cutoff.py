"""Cutoff-crossing detection, epoch-budget checks, and display smoothing.

Crossing detection always runs on the raw series; smoothing exists only for
presentation and must never feed back into detection.
"""

from __future__ import annotations

from typing import Optional, Tuple

from .errors import UsageError
from .types import MeasurementPoint, MeasurementSeries, TaskSpec


def detect_crossing(
    series: MeasurementSeries, task: TaskSpec
) -> Optional[Tuple[float, float]]:
    """First point at or above the task cutoff, as (elapsed_seconds, metric_value)."""
    for p in series:
        if p.metric_value >= task.cutoff:
            return (p.elapsed_seconds, p.metric_value)
    return None


def budget_exhausted(series: MeasurementSeries, task: TaskSpec) -> bool:
    """True iff the run spent its epoch budget without ever crossing the cutoff."""
    if detect_crossing(series, task) is not None:
        return False
    return series.max_epoch_fraction >= task.epoch_budget


def smooth(series: MeasurementSeries, window: int = 3) -> MeasurementSeries:
    """Centered moving average of metric values; elapsed times are untouched.

    The window truncates at the edges to whatever points exist, so output
    length always equals input length.
    """
    if window < 1 or window % 2 == 0:
        raise UsageError(f"window must be an odd positive integer, got {window}")
    half = window // 2
    pts = series.points
    smoothed = []
    for i, p in enumerate(pts):
        lo = max(0, i - half)
        hi = min(len(pts), i + half + 1)
        mean = sum(q.metric_value for q in pts[lo:hi]) / (hi - lo)
        smoothed.append(
            MeasurementPoint(
                elapsed_seconds=p.elapsed_seconds,
                metric_value=mean,
                epoch_fraction=p.epoch_fraction,
            )
        )
    return MeasurementSeries(points=tuple(smoothed), metric_kind=series.metric_kind)
