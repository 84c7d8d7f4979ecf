import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dognose.errors import EmptyTrace
from dognose.metrics import (SensorTrace, TraceFormatError, compare_schemes, compute_metrics,
                             detect_cycles, detect_post_off_peak)

readings = st.lists(st.floats(0.0, 1e3), min_size=2, max_size=200)


def trace(values, dt=1.0):
    return SensorTrace.from_readings(values, dt)


def test_hand_countable_trace():
    rep = compute_metrics(trace([0, 1, 2, 3, 2, 1, 0]), threshold=1.5)
    assert rep.peak == 3 and rep.time_to_peak == 3
    assert rep.duration_above == 3
    assert rep.auc == 9


def test_all_zero_trace():
    rep = compute_metrics(trace([0.0] * 10))
    assert rep.peak == 0 and rep.duration_above == 0 and rep.auc == 0


def test_auc_matches_trapezoid_oracle(rng):
    r = rng.random(1000) * 50
    t = np.arange(1000) * 0.5
    oracle = sum(0.5 * (r[k] + r[k + 1]) * (t[k + 1] - t[k]) for k in range(999))
    rep = compute_metrics(SensorTrace(t, r, None, None))
    assert math.isclose(rep.auc, oracle, rel_tol=1e-9)


def test_empty_trace():
    with pytest.raises(EmptyTrace):
        compute_metrics(trace([]))


def test_post_off_peak_cases():
    t = np.arange(0, 60.0)
    falling = np.where(t <= 30, t, 30 - (t - 30))
    assert detect_post_off_peak(SensorTrace(t, falling, None, None), 30.0) is None
    flat = np.full_like(t, 5.0)
    assert detect_post_off_peak(SensorTrace(t, flat, None, None), 30.0) is None
    off = 30.0
    base = np.exp(-((t - 20) / 6) ** 2) * 10
    val_off = base[30]
    bump = 1.5 * val_off * np.exp(-((t - (off + 4)) / 1.5) ** 2)
    r = np.maximum(base, bump)
    post = np.nonzero(t > off)[0]
    k = post[np.argmax(r[post])]
    got = detect_post_off_peak(SensorTrace(t, r, None, None), off)
    assert got == (t[k], r[k]) and t[k] == off + 4


def test_sinusoid_cycles():
    t = np.arange(0, 100.0, 1.0)
    # phase chosen so maxima sit at 5, 25, 45, 65, 85 s
    r = 1 + np.sin(2 * np.pi * (t - 0) / 20)
    count, period = detect_cycles(SensorTrace(t, r, None, None), 20.0)
    assert count == 5
    assert abs(period - 20.0) <= 1.0


def test_constant_has_no_cycles():
    assert detect_cycles(trace([2.0] * 50), 20.0)[0] == 0


def test_noisy_sinusoid_period(rng):
    t = np.arange(0, 200.0, 1.0)
    r = 10 + 5 * np.sin(2 * np.pi * t / 20) + rng.normal(0, 0.05, t.size)
    count, period = detect_cycles(SensorTrace(t, r, None, None), 20.0)
    assert abs(period - 20.0) <= 4.0


def test_compare_schemes_examples():
    a = compute_metrics(trace([0, 3, 0]))
    b = compute_metrics(trace([0, 2, 0]))
    cmp_ = compare_schemes({"a": a, "b": b})
    assert cmp_.orderings["peak"] == [["a"], ["b"]]
    assert cmp_.ratios["peak"][("a", "b")] == 1.5
    tie = compare_schemes({"a": a, "b": compute_metrics(trace([0, 3, 0]))})
    assert tie.orderings["peak"] == [["a", "b"]]
    assert tie.ordering_text("peak") == "a = b"


@given(st.lists(st.floats(0.0, 1e3), min_size=3, max_size=8, unique=True))
def test_order_matches_sort(peaks):
    reps = {f"s{k}": compute_metrics(trace([0, p, 0])) for k, p in enumerate(peaks)}
    got = [tier[0] for tier in compare_schemes(reps).orderings["peak"]]
    assert got == sorted(reps, key=lambda n: -reps[n].peak)


@given(readings, st.floats(0.01, 100.0))
def test_scale_equivariance(values, k):
    tr = trace(values)
    thr = 0.3 * max(values)
    a = compute_metrics(tr, threshold=thr)
    b = compute_metrics(tr.scaled(k), threshold=thr * k)
    assert math.isclose(b.peak, k * a.peak, rel_tol=1e-12, abs_tol=1e-300)
    assert math.isclose(b.auc, k * a.auc, rel_tol=1e-9, abs_tol=1e-300)
    assert b.time_to_peak == a.time_to_peak
    assert b.duration_above == a.duration_above


@given(readings, st.floats(0.0, 150.0))
def test_post_off_time_after_off(values, off):
    got = detect_post_off_peak(trace(values), off)
    if got is not None:
        assert got[0] > off


@settings(max_examples=20)
@given(readings)
def test_metrics_are_pure(values):
    tr = trace(values)
    assert compute_metrics(tr, motor_off_time=1.0) == compute_metrics(tr, motor_off_time=1.0)


def test_csv_round_trip(tmp_path, rng):
    tr = SensorTrace(np.arange(5.0), rng.random(5), rng.random(5), rng.random(5))
    tr.to_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "t_s,reading_ugm3,inhale_f,exhale_f"
    back = SensorTrace.from_csv(tmp_path / "t.csv")
    for f in ("t", "reading", "inhale_f", "exhale_f"):
        assert np.array_equal(getattr(back, f), getattr(tr, f))


def test_csv_errors_report_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t_s,reading_ugm3,inhale_f,exhale_f\n0,1,0,0\n1,2,0\n")
    with pytest.raises(TraceFormatError) as err:
        SensorTrace.from_csv(p)
    assert err.value.line == 3
    p.write_text("time,value\n0,1\n")
    with pytest.raises(TraceFormatError):
        SensorTrace.from_csv(p)
