import numpy as np
import pytest
from hypothesis import given, strategies as st

from chartpat.errors import OverlapWithExistingInjection, SpanOutOfRange, ValidationError
from chartpat.market_data import Window
from chartpat.patterns import PatternKind, detect
from chartpat.synthgen import (InjectionRecord, inject, inject_many, pattern_shape, random_walk, read_records,
                               sample_geometry, write_records)


def test_single_bar_at_start_price():
    s = random_walk(1, seed=0, start_price=42.0)
    assert len(s) == 1
    assert s.close[0] == 42.0 and s.open[0] == 42.0


def test_same_seed_same_series():
    a, b = random_walk(500, seed=7), random_walk(500, seed=7)
    for col in ("timestamps", "open", "high", "low", "close", "volume"):
        assert np.array_equal(getattr(a, col), getattr(b, col))
    assert not np.array_equal(a.close, random_walk(500, seed=8).close)


def test_vanishing_volatility():
    s = random_walk(1000, seed=1, volatility=1e-9)
    assert np.max(np.abs(np.diff(s.close)) / s.close[:-1]) < 1e-6


def test_bad_arguments():
    with pytest.raises(ValidationError):
        random_walk(0, seed=1)
    with pytest.raises(ValidationError):
        random_walk(10, seed=1, volatility=0)


def test_sessions_mark_gaps():
    s = random_walk(300, seed=2, session_minutes=100)
    assert s.gap_after.sum() == 2
    assert s.gap_after[99] and s.gap_after[199]


@given(st.integers(0, 2**31), st.floats(1e-4, 5e-3))
def test_random_walk_bars_are_valid(seed, vol):
    random_walk(200, seed=seed, volatility=vol).validate()


def covering_windows(series, kind, start, stop, window_len=30):
    for ws in range(max(0, stop - window_len), min(start, len(series) - window_len) + 1):
        m = detect(Window(series, ws, window_len), kind)
        if m is not None:
            yield m


def test_injected_flag_detected():
    s = random_walk(400, seed=3)
    s, rec = inject(s, PatternKind.BEARISH_FLAG, 100)
    s.validate()
    assert rec.start == 100 and rec.stop == 100 + rec.length
    assert any(True for _ in covering_windows(s, PatternKind.BEARISH_FLAG, rec.start, rec.stop))


def test_injected_double_bottom_completes_inside_span():
    s = random_walk(400, seed=4)
    s, rec = inject(s, PatternKind.DOUBLE_BOTTOM, 150, seed=3)
    s.validate()
    found = list(covering_windows(s, PatternKind.DOUBLE_BOTTOM, rec.start, rec.stop))
    assert found
    comp = [m.absolute_anchors()["completion"] for m in found]
    assert any(rec.start <= c < rec.stop for c in comp)


def test_span_out_of_range():
    s = random_walk(200, seed=5)
    with pytest.raises(SpanOutOfRange):
        inject(s, PatternKind.BEARISH_FLAG, len(s) - 5)


def test_overlap_rejected():
    s = random_walk(300, seed=5)
    s, rec = inject(s, PatternKind.DOUBLE_TOP, 50)
    with pytest.raises(OverlapWithExistingInjection):
        inject(s, PatternKind.DOUBLE_TOP, 60, existing=[rec])


def test_injection_keeps_continuity_after_span():
    s = random_walk(300, seed=6)
    out, rec = inject(s, PatternKind.BEARISH_FLAG, 100)
    assert out.open[rec.stop] == out.close[rec.stop - 1]
    ratio = out.close[rec.stop + 1:] / s.close[rec.stop + 1:]
    assert np.allclose(ratio, ratio[0])


@pytest.mark.parametrize("kind", list(PatternKind))
def test_inject_many_disjoint_and_recorded(tmp_path, kind):
    s = random_walk(5000, seed=9)
    s, recs = inject_many(s, kind, 20, seed=1)
    s.validate()
    spans = sorted((r.start, r.stop) for r in recs)
    assert all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))
    path = tmp_path / "rec.jsonl"
    write_records(recs, path)
    assert read_records(path) == recs


def test_inject_many_avoids_session_breaks():
    s = random_walk(8000, seed=2, session_minutes=390)
    s, recs = inject_many(s, PatternKind.DOUBLE_TOP, 40, seed=4)
    assert len(recs) == 40
    for r in recs:
        assert not s.gap_after[r.start:r.stop - 1].any()


@pytest.mark.parametrize("kind", list(PatternKind))
def test_sampled_geometry_shape_anchors(kind):
    rng = np.random.default_rng(0)
    for _ in range(20):
        path, anchors = pattern_shape(kind, sample_geometry(kind, rng))
        assert anchors == sorted(anchors) and anchors[-1] == len(path) - 1
        assert len(path) <= 30


def test_record_json():
    r = InjectionRecord(PatternKind.DOUBLE_TOP, 3, 25, 0.02, {"peak": 0.5})
    assert InjectionRecord.from_json(r.to_json()) == r
    assert r.to_json()["kind"] == "double-top"
