from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecgfusion.fiducial import (DetectionError, FiducialMarks, delineate, detect_r_peaks, pan_tompkins_stages,
                                read_fiducial_table, write_fiducial_table)
from ecgfusion.ingest import EcgRecord, SyntheticEcgSpec, subject_spec, synth_ecg
from ecgfusion.preprocess import savgol_filter

# P bump sigma giving a 100 ms ground-truth duration (10%-of-peak points at +/-2.146 sigma)
SIGMA_100MS = 100.0 / (2 * np.sqrt(2 * np.log(10)))


def match(detected, truth, tol):
    """Greedy one-to-one matching within ``tol`` samples -> (TP, FP, FN)."""
    detected, truth = list(detected), list(truth)
    used = set()
    tp = 0
    for t in truth:
        cands = [(abs(d - t), i) for i, d in enumerate(detected) if i not in used and abs(d - t) <= tol]
        if cands:
            used.add(min(cands)[1])
            tp += 1
    return tp, len(detected) - tp, len(truth) - tp


def test_stage_shapes():
    rec, _, _ = synth_ecg(SyntheticEcgSpec(), 5, 200)
    stages = pan_tompkins_stages(rec.samples)
    assert set(stages) >= {"bandpass", "derivative", "squared", "integrated"}
    assert all(v.shape == rec.samples.shape for v in stages.values())
    assert np.all(stages["squared"] >= 0)


def test_clean_60bpm_exact():
    rec, r, _ = synth_ecg(SyntheticEcgSpec(heart_rate_bpm=60), 10, 360)
    peaks = detect_r_peaks(rec)
    assert len(peaks) == len(r)
    assert np.max(np.abs(peaks.indices - r)) <= 5
    assert peaks.fs == 360


def test_noisy_75bpm_accuracy():
    rec, r, _ = synth_ecg(SyntheticEcgSpec(heart_rate_bpm=75, noise_std_mv=0.05, seed=11), 30, 360)
    tp, fp, fn = match(detect_r_peaks(rec).indices, r, 0.040 * 360)
    assert tp / (tp + fn) >= 0.99 and tp / (tp + fp) >= 0.99


@settings(max_examples=25)
@given(st.floats(50, 130), st.sampled_from([250.0, 360.0, 500.0]), st.floats(0, 0.05), st.integers(0, 999))
def test_peaks_increasing_and_refractory(hr, fs, noise, seed):
    spec = replace(subject_spec(seed % 20, noise_std_mv=noise, heart_rate_bpm=hr), seed=seed)
    rec, _, _ = synth_ecg(spec, 8, fs)
    idx = detect_r_peaks(rec).indices
    assert np.all(np.diff(idx) >= 0.2 * fs)


@pytest.mark.parametrize("scale", [0.01, 0.5, 3.0, 100.0])
def test_amplitude_scale_invariance(scale):
    rec, _, _ = synth_ecg(SyntheticEcgSpec(heart_rate_bpm=80, noise_std_mv=0.03, seed=5), 12, 360)
    base = detect_r_peaks(rec).indices
    scaled = replace(rec, samples=rec.samples * scale)
    np.testing.assert_array_equal(detect_r_peaks(scaled).indices, base)


@pytest.mark.parametrize("fs", [250.0, 360.0])
def test_windows_scale_with_fs(fs):
    spec = SyntheticEcgSpec(heart_rate_bpm=70)
    lo, _, _ = synth_ecg(spec, 10, fs)
    hi, _, _ = synth_ecg(spec, 10, 2 * fs)
    a, b = detect_r_peaks(lo).indices, detect_r_peaks(hi).indices
    assert len(a) == len(b)
    assert np.max(np.abs(b / 2 - a)) <= 1


def test_detection_errors():
    with pytest.raises(DetectionError, match="flat"):
        detect_r_peaks(EcgRecord("a", "s", "I", 360.0, np.zeros(3600)))
    with pytest.raises(DetectionError, match="2 s"):
        detect_r_peaks(EcgRecord("a", "s", "I", 360.0, np.random.default_rng(0).normal(size=500)))
    with pytest.raises(DetectionError, match="too low"):
        detect_r_peaks(EcgRecord("a", "s", "I", 50.0, np.random.default_rng(0).normal(size=500)))


def _delineate_spec(spec, fs=360.0, duration=10.0):
    rec, r, truth = synth_ecg(spec, duration, fs)
    return delineate(rec, detect_r_peaks(rec)), r, truth


def test_p_peak_location():
    marks, r, truth = _delineate_spec(SyntheticEcgSpec())
    valid = [m for m in marks if m.valid]
    assert len(valid) >= len(marks) - 2
    for m in valid:
        k = int(np.argmin(np.abs(r - m.r)))
        assert abs(m.p_peak - truth[k]["P"][1]) <= 0.010 * 360


def test_p_duration_plausibility():
    ok = SyntheticEcgSpec().with_wave("P", width_ms=SIGMA_100MS)
    marks, _, _ = _delineate_spec(ok)
    inner = marks[1:-1]
    assert all(m.valid for m in inner)
    assert all(abs(m.p_duration_ms(360) - 100) <= 8 for m in inner)
    wide = SyntheticEcgSpec().with_wave("P", width_ms=3 * SIGMA_100MS)
    marks, _, _ = _delineate_spec(wide)
    assert not any(m.valid for m in marks)


def test_missing_p_wave():
    marks, _, _ = _delineate_spec(SyntheticEcgSpec().with_wave("P", amplitude=0.0))
    assert not any(m.valid for m in marks)
    assert all(m.reason in ("P not found", "incomplete window") for m in marks)
    assert sum(m.reason == "P not found" for m in marks) >= len(marks) - 2


def test_edge_beats_flagged():
    marks, _, _ = _delineate_spec(SyntheticEcgSpec(), duration=5)
    assert not marks[-1].valid and marks[-1].reason == "incomplete window"


def test_inverted_t_wave_delineated():
    marks, r, truth = _delineate_spec(SyntheticEcgSpec().with_wave("T", amplitude=-0.3))
    valid = [m for m in marks if m.valid]
    assert valid
    for m in valid:
        k = int(np.argmin(np.abs(r - m.r)))
        assert abs(m.t_peak - truth[k]["T"][1]) <= 0.010 * 360


@settings(max_examples=20)
@given(st.integers(0, 200), st.sampled_from([250.0, 360.0, 500.0]), st.floats(0.0, 0.03))
def test_valid_marks_satisfy_invariants(subject, fs, noise):
    spec = subject_spec(subject, noise_std_mv=noise)
    rec, _, _ = synth_ecg(spec, 8, fs)
    rec = replace(rec, samples=savgol_filter(rec.samples))
    for m in delineate(rec, detect_r_peaks(rec)):
        if m.valid:
            assert m.is_ordered()
            assert 80 <= m.p_duration_ms(fs) <= 120
            assert 120 <= m.t_duration_ms(fs) <= 240
        else:
            assert m.reason


def test_fiducial_table_round_trip(tmp_path):
    marks, _, _ = _delineate_spec(SyntheticEcgSpec(), duration=5)
    write_fiducial_table(marks, tmp_path / "f.csv")
    assert read_fiducial_table(tmp_path / "f.csv") == marks
    header = (tmp_path / "f.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "beat" and header[1:10] == list(FiducialMarks.POINTS)
