import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from effbench.errors import ProtocolError, UsageError
from effbench.metering import FakeClock
from effbench.protocol import (
    DoneReason,
    EventKind,
    Session,
    SessionPhase,
    TrainerEvent,
    encode_event,
    parse_event,
)
from effbench.types import Phase

from conftest import make_task


# ---------------------------------------------------------------------------
# parsing


def test_parse_eval_event():
    event = parse_event('{"kind":"eval","metric_value":91.2,"epoch_fraction":1.5}')
    assert event.kind is EventKind.EVAL
    assert event.metric_value == 91.2
    assert event.epoch_fraction == 1.5


def test_unknown_kind_is_an_error():
    with pytest.raises(ProtocolError, match="unknown event kind"):
        parse_event('{"kind":"warp"}')


def test_blank_and_comment_lines_are_skipped():
    assert parse_event("") is None
    assert parse_event("   \n") is None
    assert parse_event("# trainer chatter") is None
    assert parse_event(b"") is None


def test_malformed_record_reports_byte_offset():
    with pytest.raises(ProtocolError) as exc:
        parse_event('{"kind": "eval", "metric_value": }')
    assert exc.value.byte_offset == 33
    assert "byte offset 33" in str(exc.value)


def test_missing_required_field_is_named():
    with pytest.raises(ProtocolError, match="metric_value"):
        parse_event('{"kind":"eval","epoch_fraction":1.0}')
    with pytest.raises(ProtocolError, match="kind"):
        parse_event('{"metric_value": 9}')


def test_unknown_fields_are_ignored():
    event = parse_event(
        '{"kind":"eval","metric_value":90.0,"epoch_fraction":1.0,"vendor_extra":{"x":1}}'
    )
    assert event.metric_value == 90.0


def test_non_finite_metric_rejected():
    with pytest.raises(ProtocolError, match="finite"):
        parse_event('{"kind":"eval","metric_value":NaN,"epoch_fraction":1.0}')


def test_wrong_field_type_rejected():
    with pytest.raises(ProtocolError, match="step_index"):
        parse_event('{"kind":"step","step_index":"three"}')


def test_encode_parse_loopback():
    line = encode_event({"kind": "hello", "model_name": "m", "phase": "finetune", "task_name": "sst2"})
    event = parse_event(line)
    assert event.kind is EventKind.HELLO
    assert event.model_name == "m"
    assert event.phase is Phase.FINETUNE


# ---------------------------------------------------------------------------
# session state machine


def hello(task="sst2", phase="finetune", **extra):
    return parse_event(
        json.dumps({"kind": "hello", "model_name": "m", "phase": phase, "task_name": task, **extra})
    )


def ev(metric, epoch):
    return TrainerEvent(kind=EventKind.EVAL, metric_value=metric, epoch_fraction=epoch)


def make_session():
    clock = FakeClock()
    return Session(task=make_task(), clock=clock, expected_phase=Phase.FINETUNE), clock


def test_hello_then_eval_appends_one_point():
    session, clock = make_session()
    session.advance(hello())
    clock.advance(10.0)
    assert session.advance(ev(91.2, 0.5)) is SessionPhase.RUNNING
    series = session.series()
    assert len(series) == 1
    assert series.points[0].elapsed_seconds == 10.0
    assert series.points[0].metric_value == 91.2


def test_eval_before_hello_fails_with_diagnostic():
    session, _ = make_session()
    assert session.advance(ev(91.2, 0.5)) is SessionPhase.FAILED
    assert "eval before hello" in session.diagnostic


def test_three_evals_with_scripted_clock_build_increasing_series():
    session, clock = make_session()
    session.advance(hello())
    for i, (dt, value) in enumerate([(5.0, 50.0), (7.0, 60.0), (11.0, 70.0)]):
        clock.advance(dt)
        session.advance(ev(value, 0.1 * (i + 1)))
    elapsed = [p.elapsed_seconds for p in session.series()]
    assert elapsed == [5.0, 12.0, 23.0]
    assert elapsed == sorted(elapsed)


def test_eval_bracket_excludes_pause_from_metered_elapsed():
    session, clock = make_session()
    session.advance(hello())
    clock.advance(10.0)
    session.advance(TrainerEvent(kind=EventKind.EVAL_BEGIN))
    assert session.state is SessionPhase.EVALUATING
    clock.advance(99.0)  # evaluation takes 99s of wall time
    session.advance(ev(55.0, 0.5))
    assert session.state is SessionPhase.RUNNING
    point = session.series().points[0]
    assert point.elapsed_seconds == 10.0  # pause excluded
    clock.advance(5.0)
    session.advance(TrainerEvent(kind=EventKind.DONE, reason=DoneReason.COMPLETED))
    assert session.final_metered == 15.0
    assert session.final_wall == 114.0


def test_double_eval_begin_fails():
    session, clock = make_session()
    session.advance(hello())
    session.advance(TrainerEvent(kind=EventKind.EVAL_BEGIN))
    assert session.advance(TrainerEvent(kind=EventKind.EVAL_BEGIN)) is SessionPhase.FAILED


def test_duplicate_hello_fails():
    session, _ = make_session()
    session.advance(hello())
    assert session.advance(hello()) is SessionPhase.FAILED
    assert "duplicate hello" in session.diagnostic


def test_wrong_phase_or_task_fails():
    session, _ = make_session()
    assert session.advance(hello(phase="inference")) is SessionPhase.FAILED

    session2, _ = make_session()
    assert session2.advance(hello(task="other")) is SessionPhase.FAILED


def test_step_indices_must_increase():
    session, _ = make_session()
    session.advance(hello())
    session.advance(TrainerEvent(kind=EventKind.STEP, step_index=5))
    assert session.advance(TrainerEvent(kind=EventKind.STEP, step_index=5)) is SessionPhase.FAILED


def test_fatal_fails_with_message():
    session, _ = make_session()
    session.advance(hello())
    session.advance(TrainerEvent(kind=EventKind.FATAL, message="gpu on fire"))
    assert session.failed
    assert "gpu on fire" in session.diagnostic


def test_advance_after_terminal_state_is_a_usage_error():
    session, _ = make_session()
    session.advance(hello())
    session.advance(TrainerEvent(kind=EventKind.DONE, reason=DoneReason.COMPLETED))
    with pytest.raises(UsageError, match="finished"):
        session.advance(ev(1.0, 1.0))


def test_non_increasing_eval_elapsed_fails():
    session, clock = make_session()
    session.advance(hello())
    clock.advance(10.0)
    session.advance(ev(50.0, 0.5))
    # clock does not advance: second eval would repeat the elapsed value
    assert session.advance(ev(60.0, 0.6)) is SessionPhase.FAILED


def test_decreasing_epoch_fraction_fails():
    session, clock = make_session()
    session.advance(hello())
    clock.advance(10.0)
    session.advance(ev(50.0, 1.0))
    clock.advance(10.0)
    assert session.advance(ev(60.0, 0.5)) is SessionPhase.FAILED


def test_advance_is_deterministic():
    def run():
        session, clock = make_session()
        states = [session.advance(hello(), at=0.0)]
        states.append(session.advance(TrainerEvent(kind=EventKind.STEP, step_index=1), at=3.0))
        states.append(session.advance(ev(70.0, 0.5), at=5.0))
        states.append(
            session.advance(TrainerEvent(kind=EventKind.DONE, reason=DoneReason.COMPLETED), at=9.0)
        )
        return states, [p for p in session.series().points], session.final_metered

    assert run() == run()


# ---------------------------------------------------------------------------
# property: any event sequence either fails the session or yields a valid series

_events = st.one_of(
    st.builds(
        lambda m, e: TrainerEvent(kind=EventKind.EVAL, metric_value=m, epoch_fraction=e),
        st.floats(0, 100, allow_nan=False),
        st.floats(0, 10, allow_nan=False),
    ),
    st.builds(lambda i: TrainerEvent(kind=EventKind.STEP, step_index=i), st.integers(0, 5)),
    st.just(TrainerEvent(kind=EventKind.EVAL_BEGIN)),
    st.just(TrainerEvent(kind=EventKind.EPOCH, epoch_index=1)),
    st.just(TrainerEvent(kind=EventKind.DONE, reason=DoneReason.COMPLETED)),
    st.just(TrainerEvent(kind=EventKind.FATAL, message="x")),
    st.builds(
        lambda: TrainerEvent(
            kind=EventKind.HELLO, model_name="m", phase=Phase.FINETUNE, task_name="sst2"
        )
    ),
)


@given(st.lists(st.tuples(_events, st.floats(0, 5, allow_nan=False)), max_size=30))
@settings(max_examples=200, deadline=None)
def test_any_event_sequence_yields_valid_series_or_failed_session(sequence):
    session, clock = make_session()
    for event, dt in sequence:
        if session.finished or session.failed:
            break
        clock.advance(dt)
        session.advance(event)
    series = session.series()  # construction revalidates the invariants
    elapsed = [p.elapsed_seconds for p in series]
    assert elapsed == sorted(set(elapsed))
    fractions = [p.epoch_fraction for p in series]
    assert fractions == sorted(fractions)
