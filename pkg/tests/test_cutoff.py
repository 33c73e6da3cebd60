import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from effbench.cutoff import budget_exhausted, detect_crossing, smooth
from effbench.errors import UsageError
from effbench.types import MeasurementPoint, MeasurementSeries, MetricKind

from conftest import make_task


def series_of(values, metric_kind=MetricKind.ACCURACY, dt=10.0, epochs_per_point=0.5):
    points = tuple(
        MeasurementPoint(
            elapsed_seconds=(i + 1) * dt,
            metric_value=v,
            epoch_fraction=(i + 1) * epochs_per_point,
        )
        for i, v in enumerate(values)
    )
    return MeasurementSeries(points=points, metric_kind=metric_kind)


def test_first_point_at_or_above_cutoff_wins():
    task = make_task(cutoff=90.0)
    s = series_of([85.0, 91.0])
    assert detect_crossing(s, task) == (20.0, 91.0)


def test_no_crossing_when_all_below():
    task = make_task(cutoff=90.0)
    assert detect_crossing(series_of([70.0, 80.0, 89.9]), task) is None


def test_crossing_on_simulated_curve_lands_one_interval_past_the_analytic_time():
    # m(t) = 95 (1 - e^(-t/100)) crosses 90 at t* = -100 ln(1 - 90/95) ~ 294.44
    task = make_task(cutoff=90.0)
    values = [95.0 * (1.0 - math.exp(-t / 100.0)) for t in range(10, 401, 10)]
    crossing = detect_crossing(series_of(values, dt=10.0), task)
    assert crossing is not None
    assert crossing[0] == 300.0
    assert crossing[1] == pytest.approx(90.27022850505293)
    t_star = -100.0 * math.log(1.0 - 90.0 / 95.0)
    assert t_star < crossing[0] <= t_star + 10.0


def test_budget_exhausted_requires_full_budget_and_no_crossing():
    task = make_task(cutoff=90.0, epoch_budget=5)
    below = series_of([50, 60, 70, 75, 78, 80, 81, 82, 83, 84], epochs_per_point=0.5)
    assert below.max_epoch_fraction == 5.0
    assert budget_exhausted(below, task)


def test_crossing_beats_budget_even_with_later_points():
    task = make_task(cutoff=90.0, epoch_budget=5)
    crossed_early = series_of([91, 80, 70, 60, 50, 40, 30, 20, 10, 5], epochs_per_point=0.5)
    assert not budget_exhausted(crossed_early, task)


def test_empty_series_is_still_running():
    task = make_task()
    empty = MeasurementSeries(points=(), metric_kind=MetricKind.ACCURACY)
    assert not budget_exhausted(empty, task)
    assert detect_crossing(empty, task) is None


# ---------------------------------------------------------------------------
# smoothing


def test_smooth_constant_series_is_identity():
    s = series_of([4.0, 4.0, 4.0, 4.0])
    assert [p.metric_value for p in smooth(s)] == [4.0, 4.0, 4.0, 4.0]


def test_smooth_truncates_at_edges():
    s = series_of([0.0, 3.0, 6.0])
    assert [p.metric_value for p in smooth(s, window=3)] == [1.5, 3.0, 4.5]


def test_smooth_single_point_unchanged():
    s = series_of([42.0])
    assert [p.metric_value for p in smooth(s)] == [42.0]


@pytest.mark.parametrize("window", [0, 2, 4, -3])
def test_smooth_rejects_even_or_nonpositive_windows(window):
    with pytest.raises(UsageError, match="odd"):
        smooth(series_of([1.0, 2.0]), window=window)


def test_smooth_window_one_is_identity():
    s = series_of([1.0, 9.0, 5.0])
    assert [p.metric_value for p in smooth(s, window=1)] == [1.0, 9.0, 5.0]


_values = st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=30)


@given(_values, st.floats(0.5, 99.5, allow_nan=False))
@settings(max_examples=150, deadline=None)
def test_detect_crossing_matches_linear_scan_oracle(values, cutoff):
    task = make_task(cutoff=cutoff)
    s = series_of(values)
    qualifying = [(p.elapsed_seconds, p.metric_value) for p in s if p.metric_value >= cutoff]
    expected = min(qualifying, key=lambda q: q[0]) if qualifying else None
    assert detect_crossing(s, task) == expected


@given(_values, st.sampled_from([1, 3, 5, 7]))
@settings(max_examples=150, deadline=None)
def test_smooth_preserves_shape_and_stays_within_window_bounds(values, window):
    s = series_of(values)
    out = smooth(s, window=window)
    assert len(out) == len(s)
    assert [p.elapsed_seconds for p in out] == [p.elapsed_seconds for p in s]
    half = window // 2
    for i, p in enumerate(out.points):
        lo = max(0, i - half)
        hi = min(len(values), i + half + 1)
        chunk = values[lo:hi]
        assert min(chunk) - 1e-9 <= p.metric_value <= max(chunk) + 1e-9


def test_crossing_must_use_the_raw_series_not_the_smoothed_one():
    # a spike crosses immediately in the raw series but vanishes once averaged
    task = make_task(cutoff=90.0)
    raw = series_of([95.0, 50.0, 95.0])
    assert detect_crossing(raw, task) == (10.0, 95.0)
    assert detect_crossing(smooth(raw), task) is None
