"""Spawns one trainer process per session and drives it to completion.

The supervisor owns the session's clock and timer, annotates every accepted
event with the metered/wall elapsed at arrival (the annotated log is itself
a valid event stream, since parsers ignore unknown fields), detects cutoff
crossings as eval points arrive, and turns the end state into a status:

  - reached: a crossing occurred; metered/wall are frozen at the crossing.
  - not_reached: the trainer finished after spending its epoch budget.
  - aborted: protocol failure, idle timeout, spawn failure, nonzero exit,
    or a finish that is neither of the above.

A failing session never affects any other: each one is a private process,
queue, clock, and timer.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .cutoff import budget_exhausted, detect_crossing
from .errors import ProtocolError
from .metering import Clock, FakeClock, MonotonicClock
from .protocol import (
    ABORT_COMMAND,
    BEGIN_COMMAND,
    DoneReason,
    EventKind,
    Session,
    parse_event,
)
from .types import MeasurementSeries, Phase, RunStatus, TaskSpec

_EOF = object()


@dataclass
class SessionOutcome:
    task: TaskSpec
    phase: Phase
    status: RunStatus
    metered_seconds: float
    wall_seconds: float
    model_name: Optional[str] = None
    params_millions: Optional[float] = None
    crossing: Optional[Tuple[float, float]] = None
    latency_ms: Optional[float] = None
    series: Optional[MeasurementSeries] = None
    done_reason: Optional[DoneReason] = None
    diagnostic: Optional[str] = None
    log_lines: List[str] = field(default_factory=list)
    prediction_paths: List[str] = field(default_factory=list)
    exit_code: Optional[int] = None
    step_count: int = 0

    @property
    def completed(self) -> bool:
        """An N/A result is a completion; only aborted counts as failure."""
        return self.status is not RunStatus.ABORTED


def _reader(stream, out_queue: "queue.Queue") -> None:
    for line in stream:
        out_queue.put(line)
    out_queue.put(_EOF)


def _drain(stream, sink: List[str]) -> None:
    for line in stream:
        sink.append(line.decode("utf-8", "replace").rstrip("\n"))
        del sink[:-20]  # keep only the tail for diagnostics


def run_session(
    command: str,
    task: TaskSpec,
    phase: Phase,
    *,
    clock_mode: str = "monotonic",
    idle_timeout: float = 300.0,
    env: Optional[Dict[str, str]] = None,
    cwd: Optional[str] = None,
) -> SessionOutcome:
    """Run one trainer process through a full protocol session."""
    clock: Clock = FakeClock() if clock_mode == "simulated" else MonotonicClock()
    session = Session(task=task, clock=clock, expected_phase=phase)
    log_lines: List[str] = []
    stderr_tail: List[str] = []
    outcome = SessionOutcome(
        task=task, phase=phase, status=RunStatus.ABORTED, metered_seconds=0.0, wall_seconds=0.0
    )

    try:
        proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            env=env,
            cwd=cwd,
        )
    except OSError as e:
        outcome.diagnostic = f"spawn failure: {e}"
        return outcome

    lines: "queue.Queue" = queue.Queue()
    threading.Thread(target=_reader, args=(proc.stdout, lines), daemon=True).start()
    threading.Thread(target=_drain, args=(proc.stderr, stderr_tail), daemon=True).start()

    def send(command_word: str) -> None:
        try:
            proc.stdin.write((command_word + "\n").encode("utf-8"))
            proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError):
            pass

    send(BEGIN_COMMAND)

    crossing: Optional[Tuple[float, float]] = None
    crossing_wall: Optional[float] = None
    abort_sent = False

    while True:
        try:
            raw = lines.get(timeout=idle_timeout)
        except queue.Empty:
            session.fail_external(f"idle timeout after {idle_timeout}s with no events")
            break
        if raw is _EOF:
            if not session.finished:
                session.fail_external("event stream ended without done")
            break
        try:
            event = parse_event(raw)
        except ProtocolError as e:
            log_lines.append("# unparseable line: " + raw.decode("utf-8", "replace").rstrip("\n"))
            session.fail_external(f"protocol error: {e}")
            break
        if event is None:
            continue
        if session.finished or session.failed:
            continue  # trailing chatter after done; ignored
        if clock_mode == "simulated" and event.sim_elapsed is not None:
            clock.advance_to(event.sim_elapsed)
        at = clock.now()
        session.advance(event, at=at)

        annotated = json.loads(raw)
        if session.timer is not None:
            annotated["metered_elapsed"] = session.timer.metered_at(at)
            annotated["wall_elapsed"] = session.timer.wall_at(at)
        log_lines.append(json.dumps(annotated, sort_keys=True, separators=(",", ":")))

        if session.failed:
            break
        if (
            event.kind is EventKind.EVAL
            and phase is not Phase.INFERENCE
            and crossing is None
            and len(session.series()) > 0
        ):
            crossing = detect_crossing(session.series(), task)
            if crossing is not None:
                idx = len(session.series()) - 1
                crossing_wall = session.wall_at_point(idx)
                if not abort_sent:
                    send(ABORT_COMMAND)
                    abort_sent = True
        if session.finished:
            break

    try:
        proc.stdin.close()
    except OSError:
        pass
    if session.failed and proc.poll() is None:
        proc.terminate()  # a failed session must not leave the trainer running
    try:
        outcome.exit_code = proc.wait(timeout=10)
    except subprocess.TimeoutExpired:
        proc.kill()
        try:
            outcome.exit_code = proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            outcome.exit_code = None
        session.fail_external("trainer did not exit after session end")

    series = session.series()
    outcome.model_name = session.model_name
    outcome.params_millions = session.params_millions
    outcome.series = series
    outcome.done_reason = session.done_reason
    outcome.log_lines = log_lines
    outcome.prediction_paths = list(session.prediction_paths)
    outcome.step_count = session.step_count
    outcome.metered_seconds = session.final_metered or 0.0
    outcome.wall_seconds = session.final_wall or 0.0

    if session.failed:
        outcome.diagnostic = session.diagnostic
        if stderr_tail and outcome.diagnostic:
            outcome.diagnostic += f" (trainer stderr tail: {' | '.join(stderr_tail[-3:])})"
        return outcome

    if outcome.exit_code not in (0, None):
        outcome.status = RunStatus.ABORTED
        outcome.diagnostic = f"trainer exited with code {outcome.exit_code}"
        return outcome

    if phase is Phase.INFERENCE:
        if session.done_reason is not DoneReason.COMPLETED:
            outcome.diagnostic = (
                f"inference ended with reason {session.done_reason.value if session.done_reason else None}"
            )
        elif session.step_count == 0:
            outcome.diagnostic = "zero instances reported"
        else:
            outcome.status = RunStatus.REACHED
            outcome.latency_ms = outcome.metered_seconds * 1000.0 / session.step_count
        return outcome

    if crossing is not None:
        outcome.status = RunStatus.REACHED
        outcome.crossing = crossing
        outcome.metered_seconds = crossing[0]
        outcome.wall_seconds = crossing_wall if crossing_wall is not None else crossing[0]
    elif budget_exhausted(series, task):
        outcome.status = RunStatus.NOT_REACHED
    else:
        outcome.diagnostic = "finished without crossing and without exhausting the epoch budget"
    return outcome
