"""Wire protocol and per-run session state machine.

Transport is line-delimited JSON on the trainer's standard output: one
object per line with a required "kind" field, UTF-8, newline-terminated.
The harness writes single-word commands ("begin", "abort") on the trainer's
standard input. Empty lines and lines starting with '#' are ignored so
trainers can interleave human-readable logs; unknown fields are ignored for
forward compatibility, unknown kinds are errors.

Event kinds and their required fields:

    hello            model_name, phase, task_name    (+ params_millions?)
    step             step_index
    eval_begin       -                                marks dev-eval start
    eval             metric_value, epoch_fraction
    epoch            epoch_index
    checkpoint       step_index, checkpoint_id
    prediction_dump  path
    done             reason  (budget_exhausted | external_stop | completed)
    fatal            message

Every event may carry an optional ``sim_elapsed`` (simulated wall seconds
since the run began); simulated-clock runs advance the harness clock to it.
The harness brackets dev-evaluation pauses from eval_begin to the next eval;
trainers that never send eval_begin simply get zero excluded time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

from .errors import ProtocolError, UsageError
from .metering import Clock, PhaseTimer, TimerState, start_phase
from .types import MeasurementPoint, MeasurementSeries, Phase, TaskSpec


class EventKind(str, Enum):
    HELLO = "hello"
    STEP = "step"
    EVAL_BEGIN = "eval_begin"
    EVAL = "eval"
    EPOCH = "epoch"
    CHECKPOINT = "checkpoint"
    PREDICTION_DUMP = "prediction_dump"
    DONE = "done"
    FATAL = "fatal"


class DoneReason(str, Enum):
    BUDGET_EXHAUSTED = "budget_exhausted"
    EXTERNAL_STOP = "external_stop"
    COMPLETED = "completed"


BEGIN_COMMAND = "begin"
ABORT_COMMAND = "abort"

_REQUIRED: Dict[EventKind, Tuple[str, ...]] = {
    EventKind.HELLO: ("model_name", "phase", "task_name"),
    EventKind.STEP: ("step_index",),
    EventKind.EVAL_BEGIN: (),
    EventKind.EVAL: ("metric_value", "epoch_fraction"),
    EventKind.EPOCH: ("epoch_index",),
    EventKind.CHECKPOINT: ("step_index", "checkpoint_id"),
    EventKind.PREDICTION_DUMP: ("path",),
    EventKind.DONE: ("reason",),
    EventKind.FATAL: ("message",),
}

_NUMERIC_FIELDS = ("metric_value", "epoch_fraction", "params_millions", "sim_elapsed")
_INT_FIELDS = ("step_index", "epoch_index")
_STR_FIELDS = ("model_name", "task_name", "checkpoint_id", "path", "message")


@dataclass(frozen=True)
class TrainerEvent:
    kind: EventKind
    model_name: Optional[str] = None
    phase: Optional[Phase] = None
    task_name: Optional[str] = None
    params_millions: Optional[float] = None
    step_index: Optional[int] = None
    metric_value: Optional[float] = None
    epoch_fraction: Optional[float] = None
    epoch_index: Optional[int] = None
    checkpoint_id: Optional[str] = None
    path: Optional[str] = None
    reason: Optional[DoneReason] = None
    message: Optional[str] = None
    sim_elapsed: Optional[float] = None


def parse_event(line: str | bytes) -> Optional[TrainerEvent]:
    """Decode one wire line into a TrainerEvent.

    Returns None for skippable lines (blank, or starting with '#'). Raises
    ProtocolError with the byte offset for malformed records, and without an
    offset for structurally valid records with bad content.
    """
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ProtocolError(f"invalid UTF-8: {e.reason}", byte_offset=e.start)
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return None
    try:
        obj = json.loads(stripped)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"malformed record: {e.msg}", byte_offset=e.pos)
    if not isinstance(obj, dict):
        raise ProtocolError(f"expected a JSON object, got {type(obj).__name__}")
    if "kind" not in obj:
        raise ProtocolError("missing required field: kind")
    try:
        kind = EventKind(obj["kind"])
    except ValueError:
        raise ProtocolError(f"unknown event kind: {obj['kind']!r}")
    for name in _REQUIRED[kind]:
        if name not in obj:
            raise ProtocolError(f"{kind.value}: missing required field: {name}")

    fields: Dict[str, object] = {"kind": kind}
    for name in _STR_FIELDS:
        if name in obj:
            value = obj[name]
            if not isinstance(value, str):
                raise ProtocolError(f"{kind.value}.{name}: expected string")
            fields[name] = value
    for name in _INT_FIELDS:
        if name in obj:
            value = obj[name]
            if not isinstance(value, int) or isinstance(value, bool):
                raise ProtocolError(f"{kind.value}.{name}: expected integer")
            fields[name] = value
    for name in _NUMERIC_FIELDS:
        if name in obj:
            value = obj[name]
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ProtocolError(f"{kind.value}.{name}: expected number")
            fields[name] = float(value)
    if "phase" in obj:
        try:
            fields["phase"] = Phase(obj["phase"])
        except ValueError:
            raise ProtocolError(f"unknown phase: {obj['phase']!r}")
    if "reason" in obj:
        try:
            fields["reason"] = DoneReason(obj["reason"])
        except ValueError:
            raise ProtocolError(f"unknown done reason: {obj['reason']!r}")
    if kind is EventKind.EVAL and not math.isfinite(fields["metric_value"]):  # type: ignore[arg-type]
        raise ProtocolError("eval.metric_value must be finite")
    return TrainerEvent(**fields)  # type: ignore[arg-type]


def encode_event(payload: Dict[str, object]) -> str:
    """Serialize an event payload to one wire line (no trailing newline)."""
    if "kind" not in payload:
        raise UsageError("event payload needs a 'kind'")
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


class SessionPhase(str, Enum):
    AWAITING_HELLO = "awaiting_hello"
    RUNNING = "running"
    EVALUATING = "evaluating"
    FINISHED = "finished"
    FAILED = "failed"


# events legal in each live state (hello/done/fatal handled explicitly)
_LEGAL_IN_RUNNING = {
    EventKind.STEP,
    EventKind.EVAL_BEGIN,
    EventKind.EVAL,
    EventKind.EPOCH,
    EventKind.CHECKPOINT,
    EventKind.PREDICTION_DUMP,
}


@dataclass
class Session:
    """Per-run protocol session: applies the transition table, accumulates
    the measurement series, and drives the phase timer's pause brackets.

    States: awaiting_hello -> running (hello); running <-> evaluating
    (eval_begin / eval); running|evaluating -> finished (done) or failed
    (fatal or any protocol violation). ``advance`` is deterministic given
    (state, event, timestamp) and never raises on trainer misbehavior — bad
    input moves the session to failed with a diagnostic.
    """

    task: TaskSpec
    clock: Clock
    expected_phase: Phase = Phase.FINETUNE

    state: SessionPhase = field(init=False, default=SessionPhase.AWAITING_HELLO)
    timer: Optional[PhaseTimer] = field(init=False, default=None)
    model_name: Optional[str] = field(init=False, default=None)
    params_millions: Optional[float] = field(init=False, default=None)
    last_step: Optional[int] = field(init=False, default=None)
    step_count: int = field(init=False, default=0)
    done_reason: Optional[DoneReason] = field(init=False, default=None)
    diagnostic: Optional[str] = field(init=False, default=None)
    prediction_paths: List[str] = field(init=False, default_factory=list)
    final_metered: Optional[float] = field(init=False, default=None)
    final_wall: Optional[float] = field(init=False, default=None)
    _points: List[MeasurementPoint] = field(init=False, default_factory=list)
    _walls: List[float] = field(init=False, default_factory=list)

    def series(self) -> MeasurementSeries:
        return MeasurementSeries(points=tuple(self._points), metric_kind=self.task.metric_kind)

    def wall_at_point(self, index: int) -> float:
        return self._walls[index]

    @property
    def finished(self) -> bool:
        return self.state is SessionPhase.FINISHED

    @property
    def failed(self) -> bool:
        return self.state is SessionPhase.FAILED

    def _fail(self, diagnostic: str, at: Optional[float] = None) -> SessionPhase:
        self.state = SessionPhase.FAILED
        self.diagnostic = diagnostic
        if self.timer is not None and self.timer.state is not TimerState.FINISHED:
            self.final_metered, self.final_wall = self.timer.finish(at=at)
        return self.state

    def fail_external(self, diagnostic: str) -> SessionPhase:
        """Fail the session for a reason outside the event stream (timeout, exit code)."""
        if self.state in (SessionPhase.FINISHED, SessionPhase.FAILED):
            return self.state
        return self._fail(diagnostic)

    def advance(self, event: TrainerEvent, at: Optional[float] = None) -> SessionPhase:
        if self.state in (SessionPhase.FINISHED, SessionPhase.FAILED):
            raise UsageError(f"advance: session is {self.state.value}")
        at = self.clock.now() if at is None else at
        kind = event.kind

        if kind is EventKind.FATAL:
            return self._fail(f"trainer fatal: {event.message}", at=at)

        if self.state is SessionPhase.AWAITING_HELLO:
            if kind is not EventKind.HELLO:
                return self._fail(f"{kind.value} before hello", at=at)
            if event.phase is not self.expected_phase:
                return self._fail(
                    f"hello declared phase {event.phase.value if event.phase else None!r}, "
                    f"expected {self.expected_phase.value}",
                    at=at,
                )
            if event.task_name != self.task.name:
                return self._fail(
                    f"hello declared task {event.task_name!r}, expected {self.task.name!r}",
                    at=at,
                )
            self.model_name = event.model_name
            self.params_millions = event.params_millions
            self.timer = start_phase(self.expected_phase, self.clock, at=at)
            self.state = SessionPhase.RUNNING
            return self.state

        assert self.timer is not None

        if kind is EventKind.HELLO:
            return self._fail("duplicate hello", at=at)

        if kind is EventKind.DONE:
            if self.state is SessionPhase.EVALUATING:
                self.timer.resume(at=at)
            self.final_metered, self.final_wall = self.timer.finish(at=at)
            self.done_reason = event.reason
            self.state = SessionPhase.FINISHED
            return self.state

        if self.state is SessionPhase.RUNNING:
            if kind not in _LEGAL_IN_RUNNING:
                return self._fail(f"{kind.value} illegal while running", at=at)
            if kind is EventKind.EVAL_BEGIN:
                self.timer.pause(at=at)
                self.state = SessionPhase.EVALUATING
                return self.state
            if kind is EventKind.EVAL:
                return self._append_eval(event, at)
            if kind is EventKind.STEP:
                assert event.step_index is not None
                if self.last_step is not None and event.step_index <= self.last_step:
                    return self._fail(
                        f"step_index must be strictly increasing "
                        f"({self.last_step} -> {event.step_index})",
                        at=at,
                    )
                self.last_step = event.step_index
                self.step_count += 1
                return self.state
            if kind is EventKind.CHECKPOINT:
                # a checkpoint may sit at the current step, but never behind it
                assert event.step_index is not None
                if self.last_step is not None and event.step_index < self.last_step:
                    return self._fail(
                        f"checkpoint step_index went backwards "
                        f"({self.last_step} -> {event.step_index})",
                        at=at,
                    )
                self.last_step = event.step_index
                return self.state
            if kind is EventKind.PREDICTION_DUMP:
                assert event.path is not None
                self.prediction_paths.append(event.path)
            return self.state  # epoch: informational

        # state is EVALUATING
        if kind is EventKind.EVAL:
            result = self._append_eval(event, at)
            if result is not SessionPhase.FAILED:
                self.timer.resume(at=at)
                self.state = SessionPhase.RUNNING
            return self.state
        return self._fail(f"{kind.value} illegal while evaluating", at=at)

    def _append_eval(self, event: TrainerEvent, at: float) -> SessionPhase:
        assert self.timer is not None
        assert event.metric_value is not None and event.epoch_fraction is not None
        metered = self.timer.metered_at(at)
        wall = self.timer.wall_at(at)
        if self._points:
            last = self._points[-1]
            if metered <= last.elapsed_seconds:
                return self._fail(
                    f"eval elapsed not increasing ({last.elapsed_seconds} -> {metered})", at=at
                )
            if event.epoch_fraction < last.epoch_fraction:
                return self._fail(
                    f"epoch_fraction decreased ({last.epoch_fraction} -> {event.epoch_fraction})",
                    at=at,
                )
        self._points.append(
            MeasurementPoint(
                elapsed_seconds=metered,
                metric_value=event.metric_value,
                epoch_fraction=event.epoch_fraction,
            )
        )
        self._walls.append(wall)
        return self.state
