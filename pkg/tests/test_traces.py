import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vbrpower.traces import (
    BUNDLED_TITLES,
    FrameTrace,
    VideoSession,
    build_consumption,
    build_overflow,
    bundled_trace,
    bundled_trace_path,
    load_trace,
    save_trace,
    synthetic_trace,
)


def test_consumption_running_sum():
    assert np.array_equal(build_consumption([3, 2, 5]), [0, 3, 5, 10])
    assert np.array_equal(build_consumption(FrameTrace([7])), [0, 7])


def test_consumption_rejects_empty():
    with pytest.raises(ValueError):
        build_consumption([])


def test_overflow_by_hand():
    # B(t) = min(D(t-1) + b, D(T)) with D(-1) = 0
    assert np.array_equal(build_overflow(np.array([0, 3, 5, 10.0]), 4, 3), [4, 4, 7, 9])


def test_overflow_needs_buffer_above_largest_frame():
    D = build_consumption([3, 2, 5])
    assert np.any(build_overflow(D, 4) < D)
    assert np.all(build_overflow(D, 5) >= D)


def test_overflow_saturates_for_huge_buffer():
    D = build_consumption([3, 2, 5])
    B = build_overflow(D, 100)
    assert np.all(B[1:] == D[-1])


@pytest.mark.parametrize("sizes", [[0, 1], [1, -2], [1, np.inf]])
def test_trace_rejects_bad_sizes(sizes):
    with pytest.raises(ValueError):
        FrameTrace(sizes)


def test_record_delivery_boundaries():
    s = VideoSession(np.array([0, 2, 5, 7, 12.0]), buffer_size=4, slot_length=1 / 30)
    # X(1) = D(1) exactly: lower boundary, no event
    assert s.record_delivery(1, 2.0) is None
    assert s.record_delivery(2, 3.0) is None
    # X(2) = 5, four more bits reach B(3) = 9 exactly: upper boundary
    assert s.record_delivery(3, 4.0) is None
    assert s.transmitted[3] == 9 == s.overflow[3]


def test_underflow_event_logged():
    s = VideoSession(np.array([0, 5, 6, 10.0]), buffer_size=6, slot_length=1.0)
    s.record_delivery(1, 5.0)
    assert s.record_delivery(2, 0.0) == "underflow"
    assert s.events[0].kind == "underflow" and s.events[0].amount == pytest.approx(1.0)


def test_overflow_event_logged():
    s = VideoSession(np.array([0, 3, 5, 10.0]), buffer_size=4, slot_length=1.0)
    assert s.record_delivery(1, 8.0) == "overflow"
    assert s.event_count("overflow") == 1


def test_record_delivery_guards():
    s = VideoSession(np.array([0, 3.0]), buffer_size=4, slot_length=1.0)
    with pytest.raises(ValueError):
        s.record_delivery(1, -1.0)
    with pytest.raises(ValueError):
        s.record_delivery(2, 1.0)
    s.record_delivery(1, 3.0)
    with pytest.raises(ValueError):
        s.record_delivery(2, 1.0)


def test_from_trace_buffer_default_and_rotation():
    tr = FrameTrace([1, 2, 3, 4], frame_rate=25)
    s = VideoSession.from_trace(tr, offset=2)
    assert s.buffer_size == 6.0
    assert s.slot_length == pytest.approx(0.04)
    assert np.array_equal(s.consumption, [0, 3, 7, 8, 10])


@given(st.lists(st.integers(1, 10_000), min_size=1, max_size=60), st.floats(1.0, 3.0))
@settings(max_examples=60, deadline=None)
def test_curves_bracket(sizes, mult):
    tr = FrameTrace(sizes)
    D = build_consumption(tr)
    B = build_overflow(D, mult * tr.max_frame)
    assert np.all(B >= D)
    assert np.all(np.diff(D) > 0)
    assert np.all(np.diff(B) >= 0)
    assert B[-1] == D[-1]


def test_trace_roundtrip_bytes(tmp_path):
    tr = FrameTrace([800, 1600, 2400], frame_rate=24, title="clip")
    path = tmp_path / "clip.txt"
    save_trace(tr, path, unit="bytes")
    back = load_trace(path)
    assert np.array_equal(back.frame_sizes, tr.frame_sizes)
    assert back.frame_rate == 24 and back.title == "clip"


def test_load_trace_without_header(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("10\n20\n\n30\n")
    tr = load_trace(path, frame_rate=10)
    assert np.array_equal(tr.frame_sizes, [10, 20, 30]) and tr.frame_rate == 10


@pytest.mark.parametrize("title", BUNDLED_TITLES)
def test_bundled_trace_checksum(title):
    # the consumption curve must end at the byte total of the file times 8
    path = bundled_trace_path(title)
    lines = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    total_bits = 8 * sum(int(ln) for ln in lines)
    tr = bundled_trace(title)
    assert len(tr) == 10_000
    assert build_consumption(tr)[-1] == total_bits
    s = VideoSession.from_trace(tr)
    assert np.all(s.overflow - s.consumption >= 0)


def test_bundled_trace_unknown():
    with pytest.raises(KeyError):
        bundled_trace("nope")


def test_synthetic_trace_deterministic():
    a = synthetic_trace(500, seed=3)
    b = synthetic_trace(500, seed=3)
    assert np.array_equal(a.frame_sizes, b.frame_sizes)
    assert np.all(a.frame_sizes % 8 == 0)
    assert a.frame_sizes.mean() == pytest.approx(16_000, rel=0.01)


@given(st.lists(st.integers(1, 5_000), min_size=1, max_size=40), st.data())
@settings(max_examples=60, deadline=None)
def test_schedule_inside_window_has_no_events(sizes, data):
    tr = FrameTrace(sizes)
    s = VideoSession.from_trace(tr, buffer_multiplier=1.5)
    for t in range(1, s.total_frames + 1):
        lo = max(0.0, s.consumption[t] - s.transmitted[t - 1])
        hi = s.overflow[t] - s.transmitted[t - 1]
        frac = data.draw(st.floats(0, 1))
        assert s.record_delivery(t, lo + frac * (hi - lo)) is None
    assert not s.events
