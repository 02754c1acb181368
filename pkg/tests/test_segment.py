import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ecgfusion.fiducial import FiducialMarks, delineate, detect_r_peaks
from ecgfusion.ingest import EcgRecord, SyntheticEcgSpec, synth_ecg, synthetic_cohort
from ecgfusion.segment import (SegmentationError, SegmentStrategy, extract_segments, random_window_starts,
                               read_segment_store, resample_linear, segment_records, segments_to_arrays,
                               write_segment_store)


@pytest.fixture(scope="module")
def beat_record():
    rec, _, _ = synth_ecg(SyntheticEcgSpec(heart_rate_bpm=70), 12, 360)
    return rec, delineate(rec, detect_r_peaks(rec))


def fake_marks(r_positions, valid=True):
    return [FiducialMarks(r - 100, r - 60, r - 30, r - 10, r, r + 10, r + 60, r + 100, r + 140, valid)
            for r in r_positions]


def test_strategy_parse():
    assert SegmentStrategy.parse("PT") is SegmentStrategy.PT
    assert SegmentStrategy.parse("qrs-centric") is SegmentStrategy.QRS_CENTRIC
    with pytest.raises(SegmentationError) as err:
        SegmentStrategy.parse("bogus")
    for name in ("pt", "qrs", "rr", "random"):
        assert name in str(err.value)


def test_pt_bounds_exact():
    rec = EcgRecord("a", "s", "I", 360.0, np.sin(np.arange(3000) / 40))
    m = FiducialMarks(1000, 1030, 1060, 1090, 1100, 1110, 1150, 1180, 1210, True)
    (seg,) = extract_segments(rec, [m], "pt", 64)
    assert (seg.start, seg.end) == (1000, 1210)
    assert seg.values[0] == rec.samples[1000] and seg.values[-1] == rec.samples[1210]


def test_qrs_window_is_300ms(beat_record):
    rec, marks = beat_record
    segs = extract_segments(rec, marks, "qrs", 64)
    assert all(s.end - s.start + 1 == 108 for s in segs)
    valid_r = [m.r for m in marks if m.valid]
    assert all(s.start <= r <= s.end for s, r in zip(segs, valid_r))


def test_rr_spans_two_cycles():
    rec = EcgRecord("a", "s", "I", 360.0, np.cos(np.arange(4000) / 30))
    marks = fake_marks([300, 600, 900, 1200, 1500])
    segs = extract_segments(rec, marks, "rr", 32)
    assert [(s.start, s.end) for s in segs] == [(300, 900), (600, 1200), (900, 1500)]


def test_random_windows(beat_record):
    rec, marks = beat_record
    a = extract_segments(rec, marks, "random", 64, seed=42)
    b = extract_segments(rec, marks, "random", 64, seed=42)
    assert [s.start for s in a] == [s.start for s in b]
    assert len(a) == min(sum(m.valid for m in marks), rec.samples.size // 360)
    assert all(s.end - s.start + 1 == 360 for s in a)
    differ = sum(
        not np.array_equal(random_window_starts(4320, 360, 5, seed), random_window_starts(4320, 360, 5, seed + 1))
        for seed in range(100)
    )
    assert differ >= 95


@given(st.integers(100, 5000), st.integers(10, 400), st.integers(1, 30), st.integers(0, 2**31 - 1))
def test_random_windows_never_overlap(n, window, count, seed):
    starts = random_window_starts(n, window, count, seed)
    assert len(starts) == min(count, n // window)
    if len(starts):
        assert starts[0] >= 0 and starts[-1] + window <= n
        assert np.all(np.diff(starts) >= window)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=300), st.integers(8, 512))
def test_resample_endpoints(raw, target):
    out = resample_linear(np.array(raw), target)
    assert out.size == target
    assert out[0] == raw[0] and out[-1] == raw[-1]
    assert out.min() >= min(raw) - 1e-12 and out.max() <= max(raw) + 1e-12


def test_invalid_beats_skipped_and_errors(beat_record):
    rec, marks = beat_record
    segs = extract_segments(rec, marks, "pt", 32)
    assert len(segs) == sum(m.valid for m in marks)
    with pytest.raises(SegmentationError, match="valid"):
        extract_segments(rec, fake_marks([500, 900], valid=False), "pt", 32)
    with pytest.raises(SegmentationError, match="target_len"):
        extract_segments(rec, marks, "pt", 4)


def test_budget_is_first_n_valid(beat_record):
    rec, marks = beat_record
    segs = extract_segments(rec, marks, "pt", 32, max_instances=3)
    first = [m.p_onset for m in marks if m.valid][:3]
    assert [s.start for s in segs] == first


def test_segment_records_budget_and_report():
    records = synthetic_cohort(3, duration_s=30, noise_std_mv=0.01, sessions=("S1", "S2"))
    segs, report = segment_records(records, "pt", 64, max_instances=20)
    X, y, sessions = segments_to_arrays(segs)
    assert X.shape[1] == 64
    pairs, counts = np.unique(np.char.add(y, sessions), return_counts=True)
    assert len(pairs) == 6 and np.all(counts == 20)
    assert 0 <= report.exclusion_rate < 0.2
    assert report.n_segments == len(segs)


def test_store_round_trip(tmp_path, beat_record):
    rec, marks = beat_record
    segs = extract_segments(rec, marks, "qrs", 48)
    write_segment_store(segs, tmp_path / "s.csv", ["ecgfusion test"])
    back = read_segment_store(tmp_path / "s.csv")
    assert len(back) == len(segs)
    for a, b in zip(segs, back):
        assert (a.subject_id, a.session_id, a.strategy, a.start, a.end, a.fs) == \
               (b.subject_id, b.session_id, b.strategy, b.start, b.end, b.fs)
        assert a.values.tobytes() == b.values.tobytes()
    assert (tmp_path / "s.csv").read_text().startswith("# ecgfusion test\nsubject_id,session_id,strategy,start,end")
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(SegmentationError):
        read_segment_store(tmp_path / "bad.csv")
