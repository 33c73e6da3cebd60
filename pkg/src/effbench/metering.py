"""Phase timers and the hardware cost model.

Timers take their readings from an injectable clock so tests can script
time; production uses the OS monotonic clock. Metered time is wall time
minus dev-evaluation pauses and is what the leaderboard scores by default.
"""

from __future__ import annotations

import time
from dataclasses import InitVar, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import List, Optional, Protocol, Tuple

from .errors import UsageError
from .types import HardwareProfile, Phase


class Clock(Protocol):
    def now(self) -> float: ...


class MonotonicClock:
    """System monotonic clock, safe for concurrent readers."""

    def now(self) -> float:
        return time.monotonic()


class FakeClock:
    """Scripted clock for tests and simulated-time runs. Never goes backwards."""

    def __init__(self, start: float = 0.0):
        self._now = start

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise UsageError("clock cannot move backwards")
        self._now += seconds

    def advance_to(self, timestamp: float) -> None:
        # clamp instead of raising: event streams may repeat a timestamp
        if timestamp > self._now:
            self._now = timestamp


class TimerState(str, Enum):
    RUNNING = "running"
    PAUSED = "paused"
    FINISHED = "finished"


@dataclass
class PhaseTimer:
    """Accumulates metered and wall time for one phase of one run.

    Pause intervals (dev-evaluation brackets) are excluded from metered time
    and always lie within [started_at, now], pairwise disjoint by
    construction. Not safe for concurrent mutation; one timer per run.
    """

    phase: Phase
    clock: Clock
    start_at: InitVar[Optional[float]] = None
    started_at: float = field(init=False)
    _pauses: List[Tuple[float, float]] = field(init=False, default_factory=list)
    _pause_started: Optional[float] = field(init=False, default=None)
    _metered_acc: float = field(init=False, default=0.0)
    _running_since: float = field(init=False)
    _state: TimerState = field(init=False, default=TimerState.RUNNING)

    def __post_init__(self, start_at: Optional[float]) -> None:
        self.started_at = self.clock.now() if start_at is None else start_at
        self._running_since = self.started_at

    @property
    def state(self) -> TimerState:
        return self._state

    def _at(self, at: Optional[float]) -> float:
        t = self.clock.now() if at is None else at
        if t < self.started_at:
            raise UsageError("timestamp precedes timer start")
        return t

    def pause(self, at: Optional[float] = None) -> None:
        if self._state is not TimerState.RUNNING:
            raise UsageError(f"pause: timer is {self._state.value}")
        t = self._at(at)
        if t < self._running_since:
            raise UsageError("pause timestamp precedes the running interval")
        self._metered_acc += t - self._running_since
        self._pause_started = t
        self._state = TimerState.PAUSED

    def resume(self, at: Optional[float] = None) -> None:
        if self._state is not TimerState.PAUSED:
            raise UsageError(f"resume: timer is {self._state.value}")
        t = self._at(at)
        assert self._pause_started is not None
        if t < self._pause_started:
            raise UsageError("resume timestamp precedes pause start")
        self._pauses.append((self._pause_started, t))
        self._pause_started = None
        self._running_since = t
        self._state = TimerState.RUNNING

    def wall_at(self, at: Optional[float] = None) -> float:
        return self._at(at) - self.started_at

    def metered_at(self, at: Optional[float] = None) -> float:
        """Metered seconds as of a timestamp: accumulated running time only.

        Running time accumulates additively (never by subtracting pause
        totals), so readings are monotone under float rounding; the wall
        clamp keeps metered <= wall exactly.
        """
        t = self._at(at)
        metered = self._metered_acc
        if self._state is TimerState.RUNNING and t > self._running_since:
            metered += t - self._running_since
        return min(metered, self.wall_at(t))

    def finish(self, at: Optional[float] = None) -> Tuple[float, float]:
        """Stop the timer and return (metered_seconds, wall_seconds)."""
        if self._state is TimerState.FINISHED:
            raise UsageError("finish: timer is finished")
        t = self._at(at)
        if self._state is TimerState.PAUSED:
            self.resume(at=t)
        if t < self._running_since:
            raise UsageError("finish timestamp precedes the running interval")
        self._metered_acc += t - self._running_since
        self._running_since = t
        self._state = TimerState.FINISHED
        return self.metered_at(t), self.wall_at(t)


def start_phase(
    phase: Phase, clock: Optional[Clock] = None, at: Optional[float] = None
) -> PhaseTimer:
    return PhaseTimer(phase=phase, clock=clock or MonotonicClock(), start_at=at)


def compute_cost(duration_hours: float, profile: HardwareProfile) -> float:
    """USD cost of running ``profile`` for ``duration_hours``.

    cost = duration_hours * unit_count * unit_price_per_hour, where for TPU
    profiles unit_count is total_chips / chips_per_unit. Arithmetic runs in
    decimal so dollar amounts are exact; rounding happens only at display.
    """
    if duration_hours < 0:
        raise UsageError("duration_hours must be nonnegative")
    amount = (
        Decimal(str(duration_hours))
        * profile.unit_count
        * Decimal(str(profile.unit_price_per_hour))
    )
    return float(amount)


def cost_for_seconds(seconds: float, profile: HardwareProfile) -> float:
    return compute_cost(seconds / 3600.0, profile)


def format_usd(amount: float, decimals: int = 2) -> str:
    """Format a dollar amount with thousands separators, rounding half-up."""
    quantum = Decimal(1).scaleb(-decimals) if decimals > 0 else Decimal(1)
    value = Decimal(str(amount)).quantize(quantum, rounding=ROUND_HALF_UP)
    return f"${value:,}"
