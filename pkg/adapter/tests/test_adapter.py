"""Adapter unit tests plus cross-component conformance against the harness.

The conformance tests require the effbench package (a test-only dependency);
the shim itself is stdlib-only.
"""

import io
import json
import os
import sys
import threading
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from effbench_adapter import (
    AdapterError,
    OrderingError,
    OutputClosedError,
    TrainerShim,
    watch_abort,
)

from effbench.metering import FakeClock
from effbench.protocol import Session, parse_event
from effbench.supervisor import run_session
from effbench.types import MetricKind, Phase, RunStatus, TaskSpec

HOST_SCRIPT = Path(__file__).parent / "host_loop.py"


def sst2_task(cutoff=90.0):
    return TaskSpec(name="sst2", metric_kind=MetricKind.ACCURACY, cutoff=cutoff, dev_size=872)


def shim_to_buffer(**kwargs):
    out = io.StringIO()
    shim = TrainerShim(
        model_name=kwargs.pop("model_name", "hosted"),
        phase=kwargs.pop("phase", "finetune"),
        task_name=kwargs.pop("task_name", "sst2"),
        out=out,
        **kwargs,
    )
    return shim, out


# ---------------------------------------------------------------------------
# ordering and transport


def test_loopback_lines_parse_with_the_harness_parser():
    shim, out = shim_to_buffer()
    shim.hello(params_millions=118.0)
    shim.on_step()
    shim.on_eval_begin()
    shim.on_eval_end(91.2, 1.5)
    shim.prediction_dump("/tmp/preds")
    shim.done()
    events = [parse_event(line) for line in out.getvalue().splitlines()]
    assert [e.kind.value for e in events] == [
        "hello",
        "step",
        "eval_begin",
        "eval",
        "prediction_dump",
        "done",
    ]
    assert events[0].params_millions == 118.0
    assert events[3].metric_value == 91.2


def test_eval_before_hello_raises_locally():
    shim, out = shim_to_buffer()
    with pytest.raises(OrderingError, match="before hello"):
        shim.emit({"kind": "eval", "metric_value": 1.0, "epoch_fraction": 0.1})
    assert out.getvalue() == ""  # nothing reached the wire


def test_eval_end_requires_eval_begin():
    shim, _ = shim_to_buffer()
    shim.hello()
    with pytest.raises(OrderingError, match="without on_eval_begin"):
        shim.on_eval_end(90.0, 1.0)


def test_step_during_eval_bracket_raises():
    shim, _ = shim_to_buffer()
    shim.hello()
    shim.on_eval_begin()
    with pytest.raises(OrderingError, match="between eval_begin"):
        shim.on_step()


def test_nothing_after_done():
    shim, _ = shim_to_buffer()
    shim.hello()
    shim.done()
    with pytest.raises(OrderingError, match="after done"):
        shim.on_step()


def test_duplicate_hello_and_bad_arguments():
    shim, _ = shim_to_buffer()
    shim.hello()
    with pytest.raises(OrderingError, match="duplicate"):
        shim.hello()
    with pytest.raises(AdapterError, match="phase"):
        TrainerShim(model_name="m", phase="training", task_name="t")
    with pytest.raises(AdapterError, match="reason"):
        shim.done("gave_up")


def test_step_indices_autoincrement_and_reject_regressions():
    shim, out = shim_to_buffer()
    shim.hello()
    assert shim.on_step() == 1
    assert shim.on_step() == 2
    assert shim.on_step(10) == 10
    assert shim.on_step() == 11
    with pytest.raises(OrderingError, match="increase"):
        shim.on_step(4)
    indices = [
        json.loads(line)["step_index"]
        for line in out.getvalue().splitlines()
        if '"step"' in line
    ]
    assert indices == [1, 2, 10, 11]


def test_bare_eval_is_allowed_without_bracket():
    shim, out = shim_to_buffer()
    shim.hello()
    shim.eval_without_bracket(88.0, 0.5)
    assert parse_event(out.getvalue().splitlines()[-1]).metric_value == 88.0


def test_checkpoint_uses_the_current_step():
    shim, out = shim_to_buffer()
    shim.hello()
    shim.on_step()
    shim.checkpoint("ck-1")
    event = parse_event(out.getvalue().splitlines()[-1])
    assert event.checkpoint_id == "ck-1"
    assert event.step_index == 1


def test_closed_output_channel_raises():
    out = io.StringIO()
    shim = TrainerShim(model_name="m", phase="finetune", task_name="t", out=out)
    shim.hello()
    out.close()
    with pytest.raises(OutputClosedError):
        shim.on_step()


def test_scripted_loop_drives_a_harness_session_in_process():
    shim, out = shim_to_buffer()
    shim.hello()
    for i, metric in enumerate([85.0, 88.0, 91.5], start=1):
        shim.on_step()
        shim.on_eval_begin()
        shim.on_eval_end(metric, i * 0.5)
    shim.done()

    clock = FakeClock()
    session = Session(task=sst2_task(), clock=clock, expected_phase=Phase.FINETUNE)
    for line in out.getvalue().splitlines():
        clock.advance(1.0)  # arrival times are the harness's business
        session.advance(parse_event(line))
        assert not session.failed, session.diagnostic
    assert session.finished
    assert len(session.series()) == 3
    assert [p.metric_value for p in session.series()] == [85.0, 88.0, 91.5]


# ---------------------------------------------------------------------------
# abort watcher


def watcher_on_pipe(callback, poll_interval=0.05):
    read_fd, write_fd = os.pipe()
    reader = os.fdopen(read_fd, "r")
    writer = os.fdopen(write_fd, "w")
    return watch_abort(callback, poll_interval=poll_interval, stdin=reader), writer


def test_abort_fires_within_one_poll_interval():
    fired = threading.Event()
    poll = 0.05
    watcher, writer = watcher_on_pipe(fired.set, poll_interval=poll)
    time.sleep(0.02)  # let the watcher reach its select loop
    start = time.monotonic()
    writer.write("abort\n")
    writer.flush()
    assert fired.wait(timeout=poll + 0.25)
    assert time.monotonic() - start <= poll + 0.25
    watcher.stop()


def test_no_abort_means_no_callback():
    fired = threading.Event()
    watcher, writer = watcher_on_pipe(fired.set, poll_interval=0.02)
    assert not fired.wait(timeout=0.2)
    watcher.stop()
    assert not fired.is_set()


def test_closed_input_terminates_the_watcher_quietly():
    fired = threading.Event()
    watcher, writer = watcher_on_pipe(fired.set, poll_interval=0.02)
    writer.close()
    deadline = time.monotonic() + 2.0
    while watcher.alive and time.monotonic() < deadline:
        time.sleep(0.01)
    assert not watcher.alive
    assert not fired.is_set()


def test_wait_for_begin_times_out_quietly():
    read_fd, write_fd = os.pipe()
    shim = TrainerShim(
        model_name="m", phase="finetune", task_name="t", out=io.StringIO(), stdin=os.fdopen(read_fd, "r")
    )
    assert shim.wait_for_begin(timeout=0.05) is False
    os.fdopen(write_fd, "w").close()


# ---------------------------------------------------------------------------
# acceptance: host loop under the real harness, via the wire only


def host_command(metrics, sleep=0.0):
    env_path = Path(__file__).parent.parent
    return (
        f"{sys.executable} {HOST_SCRIPT} --task {{task}} --metrics {metrics} --sleep {sleep}"
    ), {**os.environ, "PYTHONPATH": f"{env_path}{os.pathsep}" + os.environ.get("PYTHONPATH", "")}


def test_acceptance_three_eval_loopback_yields_three_points_and_crossing():
    # the crossing sits on the final eval, so the harness abort (a correct
    # reaction to it) cannot race the remaining scripted cycles
    cmd, env = host_command("85,88,91.5")
    outcome = run_session(
        cmd.format(task="sst2"), sst2_task(cutoff=90.0), Phase.FINETUNE, idle_timeout=15.0, env=env
    )
    assert outcome.status is RunStatus.REACHED
    assert len(outcome.series) == 3
    assert [p.metric_value for p in outcome.series] == [85.0, 88.0, 91.5]
    assert outcome.crossing is not None
    assert outcome.crossing[1] == 91.5  # first value at or above the cutoff
    assert outcome.exit_code == 0
    print("PASS  adapter loopback: hello + 3 evals + done -> 3-point series, crossing at 91.5")


def test_acceptance_abort_round_trip_stops_the_host_loop():
    # 40 slow cycles, crossing at the second: the harness abort must land
    # long before the scripted loop would finish on its own
    metrics = ",".join(["85", "91"] + ["92"] * 38)
    cmd, env = host_command(metrics, sleep=0.05)
    start = time.monotonic()
    outcome = run_session(
        cmd.format(task="sst2"), sst2_task(cutoff=90.0), Phase.FINETUNE, idle_timeout=15.0, env=env
    )
    elapsed = time.monotonic() - start
    assert outcome.status is RunStatus.REACHED
    assert outcome.done_reason is not None and outcome.done_reason.value == "external_stop"
    assert len(outcome.series) < 40  # the loop was cut short by abort
    assert outcome.exit_code == 0
    assert elapsed < 5.0  # nowhere near the 2s the full loop would need
    print("PASS  adapter abort round-trip: watcher stopped the loop within a poll interval")
