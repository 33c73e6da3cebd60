"""Shim that lets a real training loop talk to the effbench harness.

Drop this single file next to your training code (it needs nothing beyond
the standard library), construct a :class:`TrainerShim`, and call its hook
methods from your loop. The shim writes one protocol-conformant JSON line
per event to stdout, flushed immediately so the harness can meter arrival
times, and enforces event ordering locally so mistakes fail fast in your
process instead of aborting the benchmark session with a cryptic
diagnostic.

Typical wiring:

    from effbench_adapter import TrainerShim, watch_abort

    shim = TrainerShim(model_name="my-model", phase="finetune", task_name="sst2")
    shim.wait_for_begin()

    stop = threading.Event()
    watcher = watch_abort(stop.set)

    shim.hello(params_millions=118.0)
    for step in training_loop():
        if stop.is_set():
            save_checkpoint()
            shim.done("external_stop")
            break
        shim.on_step()
        if time_to_evaluate(step):
            shim.on_eval_begin()
            metric = evaluate_dev_set()          # the shim never computes metrics
            shim.on_eval_end(metric, epochs_completed())
    else:
        shim.prediction_dump(write_dev_predictions())
        shim.done("budget_exhausted")
    watcher.stop()

The shim performs no metric computation and owns no training state; the
host loop supplies every value. Emission is serialized by a writer lock, so
hooks may be called from callback threads; the abort watcher runs on its
own daemon thread and goes quiet if stdin closes.
"""

from __future__ import annotations

import json
import select
import sys
import threading
from typing import Callable, Optional, TextIO

__all__ = [
    "AdapterError",
    "OrderingError",
    "OutputClosedError",
    "TrainerShim",
    "AbortWatcher",
    "watch_abort",
    "PHASES",
    "DONE_REASONS",
]

PHASES = ("pretrain", "finetune", "inference")
DONE_REASONS = ("budget_exhausted", "external_stop", "completed")

BEGIN_COMMAND = "begin"
ABORT_COMMAND = "abort"


class AdapterError(RuntimeError):
    """Base error for shim misuse or transport failure."""


class OrderingError(AdapterError):
    """An event was emitted out of protocol order."""


class OutputClosedError(AdapterError):
    """The output channel is gone; the host loop should stop."""


# internal lifecycle states
_NEW = "new"
_RUNNING = "running"
_EVALUATING = "evaluating"
_ENDED = "ended"


class TrainerShim:
    """Emits wire-protocol events for one benchmark session.

    Lifecycle: ``hello()`` first, then any mix of ``on_step`` /
    ``on_eval_begin`` + ``on_eval_end`` / ``epoch`` / ``checkpoint`` /
    ``prediction_dump``, then exactly one ``done()`` (or ``fatal()``).
    ``on_eval_end`` is legal only between ``on_eval_begin`` and the next
    ``on_step``.
    """

    def __init__(
        self,
        model_name: str,
        phase: str,
        task_name: str,
        out: Optional[TextIO] = None,
        stdin: Optional[TextIO] = None,
    ):
        if phase not in PHASES:
            raise AdapterError(f"unknown phase {phase!r}, expected one of {PHASES}")
        if not model_name or not task_name:
            raise AdapterError("model_name and task_name must be nonempty")
        self.model_name = model_name
        self.phase = phase
        self.task_name = task_name
        self._out = out if out is not None else sys.stdout
        self._stdin = stdin if stdin is not None else sys.stdin
        self._lock = threading.Lock()
        self._state = _NEW
        self._next_step = 1
        self._last_step: Optional[int] = None

    # -- transport ---------------------------------------------------------

    def emit(self, event: dict) -> None:
        """Write one event as a JSON line and flush it immediately.

        The event must respect session ordering (the same rules the harness
        enforces); violations raise :class:`OrderingError` locally, before
        anything reaches the wire.
        """
        if "kind" not in event:
            raise AdapterError("event needs a 'kind' field")
        with self._lock:
            self._check_order(event)
            try:
                self._out.write(json.dumps(event, sort_keys=True) + "\n")
                self._out.flush()
            except (BrokenPipeError, ValueError, OSError) as e:
                raise OutputClosedError(f"output channel closed: {e}") from e
            self._apply(event)

    def _check_order(self, event: dict) -> None:
        kind = event["kind"]
        if self._state == _ENDED:
            raise OrderingError(f"{kind} after done/fatal")
        if kind == "hello":
            if self._state != _NEW:
                raise OrderingError("duplicate hello")
            return
        if kind == "fatal":
            return
        if self._state == _NEW:
            raise OrderingError(f"{kind} before hello")
        if self._state == _EVALUATING and kind not in ("eval", "done"):
            raise OrderingError(f"{kind} between eval_begin and eval_end")
        if kind == "step":
            index = event["step_index"]
            if self._last_step is not None and index <= self._last_step:
                raise OrderingError(f"step_index must increase ({self._last_step} -> {index})")

    def _apply(self, event: dict) -> None:
        kind = event["kind"]
        if kind == "hello":
            self._state = _RUNNING
        elif kind == "eval_begin":
            self._state = _EVALUATING
        elif kind == "eval":
            self._state = _RUNNING
        elif kind in ("done", "fatal"):
            self._state = _ENDED
        elif kind == "step":
            self._last_step = event["step_index"]
            self._next_step = event["step_index"] + 1

    # -- handshake ---------------------------------------------------------

    def wait_for_begin(self, timeout: Optional[float] = None) -> bool:
        """Block until the harness sends ``begin`` (True) or stdin closes /
        the timeout expires (False)."""
        ready, _, _ = select.select([self._stdin], [], [], timeout)
        if not ready:
            return False
        line = self._stdin.readline()
        return line.strip() == BEGIN_COMMAND

    # -- hook points for the host training loop -----------------------------

    def hello(self, params_millions: Optional[float] = None) -> None:
        event = {
            "kind": "hello",
            "model_name": self.model_name,
            "phase": self.phase,
            "task_name": self.task_name,
        }
        if params_millions is not None:
            event["params_millions"] = float(params_millions)
        self.emit(event)

    def on_step(self, step_index: Optional[int] = None) -> int:
        index = self._next_step if step_index is None else int(step_index)
        self.emit({"kind": "step", "step_index": index})
        return index

    def on_eval_begin(self) -> None:
        self.emit({"kind": "eval_begin"})

    def on_eval_end(self, metric_value: float, epoch_fraction: float) -> None:
        """Report a dev evaluation result, closing the pause bracket.

        Legal only between on_eval_begin and the next on_step; use
        :meth:`eval_without_bracket` for evals whose duration should stay
        metered.
        """
        if self._state != _EVALUATING:
            raise OrderingError("on_eval_end without on_eval_begin")
        self.emit(
            {
                "kind": "eval",
                "metric_value": float(metric_value),
                "epoch_fraction": float(epoch_fraction),
            }
        )

    def eval_without_bracket(self, metric_value: float, epoch_fraction: float) -> None:
        """Report an eval with no pause bracket (its duration stays metered)."""
        self.emit(
            {
                "kind": "eval",
                "metric_value": float(metric_value),
                "epoch_fraction": float(epoch_fraction),
            }
        )

    def epoch(self, epoch_index: int) -> None:
        self.emit({"kind": "epoch", "epoch_index": int(epoch_index)})

    def checkpoint(self, checkpoint_id: str, step_index: Optional[int] = None) -> None:
        index = self._last_step if step_index is None else int(step_index)
        if index is None:
            raise OrderingError("checkpoint before any step")
        self.emit({"kind": "checkpoint", "step_index": index, "checkpoint_id": str(checkpoint_id)})

    def prediction_dump(self, path: str) -> None:
        self.emit({"kind": "prediction_dump", "path": str(path)})

    def done(self, reason: str = "completed") -> None:
        if reason not in DONE_REASONS:
            raise AdapterError(f"unknown done reason {reason!r}, expected one of {DONE_REASONS}")
        self.emit({"kind": "done", "reason": reason})

    def fatal(self, message: str) -> None:
        self.emit({"kind": "fatal", "message": str(message)})


class AbortWatcher:
    """Background thread that invokes a callback once when the harness sends
    ``abort``. Goes quiet (no callback, thread exits) if stdin closes."""

    def __init__(
        self,
        callback: Callable[[], None],
        poll_interval: float = 0.05,
        stdin: Optional[TextIO] = None,
    ):
        self._callback = callback
        self._poll_interval = poll_interval
        self._stdin = stdin if stdin is not None else sys.stdin
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True, name="effbench-abort-watcher")
        self._thread.start()

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                ready, _, _ = select.select([self._stdin], [], [], self._poll_interval)
            except (OSError, ValueError):
                return  # stdin closed underneath us
            if not ready:
                continue
            line = self._stdin.readline()
            if line == "":
                return  # EOF: harness went away, nothing to watch
            if line.strip() == ABORT_COMMAND:
                self._callback()
                return

    def stop(self, join_timeout: float = 1.0) -> None:
        self._stop.set()
        self._thread.join(timeout=join_timeout)

    @property
    def alive(self) -> bool:
        return self._thread.is_alive()


def watch_abort(
    callback: Callable[[], None],
    poll_interval: float = 0.05,
    stdin: Optional[TextIO] = None,
) -> AbortWatcher:
    """Start a background watcher that fires ``callback`` on harness abort."""
    return AbortWatcher(callback, poll_interval=poll_interval, stdin=stdin)
