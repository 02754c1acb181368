import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ecgfusion.ingest import (EcgRecord, IngestError, SyntheticEcgSpec, WaveBump, load_manifest, load_records,
                              pack_212, read_records_jsonl, read_wfdb_header, read_wfdb_record, subject_spec,
                              synth_ecg, synthetic_cohort, unpack_212, warp_spec, write_records_jsonl,
                              write_wfdb_record)


def reference_pack_212(values):
    """Bit-by-bit packer written from the byte layout, independent of the library."""
    out = bytearray()
    for i in range(0, len(values), 2):
        a = values[i] & 0xFFF
        b = values[i + 1] & 0xFFF if i + 1 < len(values) else None
        out.append(a & 0xFF)
        if b is None:
            out.append((a >> 8) & 0x0F)
        else:
            out.append(((b >> 8) << 4) | (a >> 8))
            out.append(b & 0xFF)
    return bytes(out)


class TestFormat212:
    def test_known_triple(self):
        assert unpack_212(bytes([0xE8, 0x03, 0x7D])).tolist() == [1000, 125]

    def test_reference_packer_agrees_on_known_values(self):
        assert reference_pack_212([1000, 125]) == bytes([0xE8, 0x03, 0x7D])
        assert pack_212([1000, 125]) == bytes([0xE8, 0x03, 0x7D])

    @given(st.lists(st.integers(-2048, 2047), max_size=60))
    def test_decode_encode_identity(self, values):
        data = pack_212(values)
        assert data == reference_pack_212(values)
        assert unpack_212(data, len(values)).tolist() == values

    def test_out_of_range(self):
        with pytest.raises(IngestError):
            pack_212([2048])

    def test_truncated_request(self):
        with pytest.raises(IngestError, match="truncated"):
            unpack_212(bytes(3), 4)


HEADER = """rec01 2 360 4
rec01.dat 16 200(10)/mV 16 0 0 0 0 MLII
rec01.dat 16 100/mV 16 0 0 0 0 V5
"""


@pytest.fixture
def fmt16_record(tmp_path):
    (tmp_path / "rec01.hea").write_text(HEADER)
    raw = [210, 50, 410, -50, 10, 150, -190, 250]  # interleaved (MLII, V5)
    (tmp_path / "rec01.dat").write_bytes(struct.pack("<8h", *raw))
    return tmp_path / "rec01.hea"


class TestWfdb:
    def test_header_fields(self, fmt16_record):
        h = read_wfdb_header(fmt16_record)
        assert (h.n_signals, h.fs, h.n_samples) == (2, 360.0, 4)
        assert h.gains == [200.0, 100.0] and h.baselines == [10.0, 0.0]
        assert h.lead_names == ["MLII", "V5"]

    def test_amplitude_conversion(self, fmt16_record):
        rec = read_wfdb_record(fmt16_record)
        assert rec.sampling_rate_hz == 360
        np.testing.assert_allclose(rec.samples, (np.array([210, 410, 10, -190]) - 10) / 200)
        v5 = read_wfdb_record(fmt16_record, lead="V5", subject_id="a", session_id="s")
        np.testing.assert_allclose(v5.samples, np.array([50, -50, 150, 250]) / 100)
        assert (v5.subject_id, v5.session_id, v5.lead_name) == ("a", "s", "V5")

    def test_missing_dat(self, fmt16_record):
        (fmt16_record.parent / "rec01.dat").unlink()
        with pytest.raises(IngestError, match="not found"):
            read_wfdb_record(fmt16_record)

    def test_missing_header(self, tmp_path):
        with pytest.raises(IngestError, match="not found"):
            read_wfdb_record(tmp_path / "nope.hea")

    def test_truncated_dat(self, fmt16_record):
        (fmt16_record.parent / "rec01.dat").write_bytes(struct.pack("<5h", 1, 2, 3, 4, 5))
        with pytest.raises(IngestError, match="truncated"):
            read_wfdb_record(fmt16_record)

    def test_unsupported_format(self, fmt16_record):
        fmt16_record.write_text(HEADER.replace(" 16 ", " 80 "))
        with pytest.raises(IngestError, match="unsupported"):
            read_wfdb_record(fmt16_record)

    @pytest.mark.parametrize("lead", ["V1", 5])
    def test_absent_lead(self, fmt16_record, lead):
        with pytest.raises(IngestError, match="absent"):
            read_wfdb_record(fmt16_record, lead=lead)

    @pytest.mark.parametrize("fmt", [16, 212])
    def test_round_trip(self, tmp_path, fmt):
        rng = np.random.default_rng(0)
        sig = np.round(rng.normal(0, 1, (101, 2)) * 200) / 200
        hea = write_wfdb_record(tmp_path, "r", sig, 250.0, fmt=fmt, lead_names=["I", "II"])
        for i, name in enumerate(["I", "II"]):
            rec = read_wfdb_record(hea, lead=name)
            np.testing.assert_allclose(rec.samples, sig[:, i], atol=1e-12)


class TestSynth:
    def test_rr_spacing_at_60_bpm(self):
        rec, r, _ = synth_ecg(SyntheticEcgSpec(heart_rate_bpm=60), 10, 360)
        assert np.all(np.diff(r) == 360)
        assert rec.samples.size == 3600

    def test_deterministic(self):
        spec = SyntheticEcgSpec(noise_std_mv=0.05, seed=3)
        a, _, _ = synth_ecg(spec, 5, 250)
        b, _, _ = synth_ecg(spec, 5, 250)
        assert a.samples.tobytes() == b.samples.tobytes()

    def test_noise_std(self):
        clean, _, _ = synth_ecg(SyntheticEcgSpec(), 60, 360)
        noisy, _, _ = synth_ecg(SyntheticEcgSpec(noise_std_mv=0.05, seed=7), 60, 360)
        assert abs(np.std(noisy.samples - clean.samples) - 0.05) < 0.005

    @given(st.floats(45, 150), st.sampled_from([250.0, 360.0, 500.0]), st.integers(0, 50))
    def test_r_indices_are_beat_maxima(self, hr, fs, subject):
        spec = subject_spec(subject, noise_std_mv=0.0, heart_rate_bpm=hr)
        rec, r, _ = synth_ecg(spec, 6, fs)
        x = rec.samples
        bounds = np.r_[0, (r[:-1] + r[1:]) // 2, x.size]
        for k, peak in enumerate(r):
            assert np.argmax(x[bounds[k]:bounds[k + 1]]) + bounds[k] == peak

    def test_ground_truth_windows(self):
        _, r, truth = synth_ecg(SyntheticEcgSpec(), 5, 500)
        p = truth[1]["P"]
        assert p[1] == r[1] - 80  # -160 ms at 500 Hz
        assert p[0] < p[1] < p[2]

    def test_errors(self):
        with pytest.raises(IngestError, match="two beats"):
            synth_ecg(SyntheticEcgSpec(heart_rate_bpm=60), 1.5, 360)
        with pytest.raises(IngestError, match="resolve"):
            synth_ecg(SyntheticEcgSpec(), 10, 80)

    def test_spec_invariants(self):
        with pytest.raises(IngestError, match="ordered"):
            SyntheticEcgSpec().with_wave("P", center_ms=-10.0)
        with pytest.raises(IngestError, match="widths"):
            SyntheticEcgSpec().with_wave("T", width_ms=0.0)
        with pytest.raises(IngestError):
            SyntheticEcgSpec(heart_rate_bpm=0)

    def test_warp_and_cohort(self):
        spec = SyntheticEcgSpec()
        w = warp_spec(spec, 1.1)
        assert w.waves["T"].center_ms == pytest.approx(330.0)
        assert w.waves["R"].center_ms == 0.0
        recs = synthetic_cohort(3, duration_s=5, sessions=("S1", "S2"))
        assert [(r.subject_id, r.session_id) for r in recs][:2] == [("subj00", "S1"), ("subj00", "S2")]
        assert not np.array_equal(recs[0].samples, recs[1].samples)
        with pytest.raises(IngestError):
            synthetic_cohort(1)


class TestRecord:
    def test_invariants(self):
        with pytest.raises(IngestError):
            EcgRecord("a", "s", "I", 0.0, np.ones(3))
        with pytest.raises(IngestError):
            EcgRecord("a", "s", "I", 100.0, np.array([]))
        with pytest.raises(IngestError):
            EcgRecord("a", "s", "I", 100.0, np.array([1.0, np.nan]))

    def test_truncation(self, caplog):
        rec = EcgRecord("a", "s", "I", 100.0, np.arange(500.0))
        assert rec.truncated(2.0).samples.size == 200
        with caplog.at_level("INFO"):
            assert rec.truncated(60.0) is rec
        assert "shorter" in caplog.text

    def test_jsonl_round_trip(self, tmp_path):
        recs = synthetic_cohort(2, duration_s=3, noise_std_mv=0.02)
        write_records_jsonl(recs, tmp_path / "r.jsonl", ["hello"])
        back, comments = read_records_jsonl(tmp_path / "r.jsonl")
        assert comments == ["hello"]
        for a, b in zip(recs, back):
            assert a.samples.tobytes() == b.samples.tobytes()
            assert (a.subject_id, a.session_id, a.fs) == (b.subject_id, b.session_id, b.fs)


class TestManifest:
    def write(self, tmp_path, text):
        p = tmp_path / "m.txt"
        p.write_text(text)
        return p

    def test_roster(self, tmp_path):
        m = load_manifest(self.write(tmp_path, "fs=360\n# comment\nsynth:hr=60,a,S1\nsynth:hr=70,a,S2\n"
                                               "synth:hr=80,b,S1\n"))
        assert m.subjects == ["a", "b"] and len(m.entries) == 3
        assert m.sessions == ["S1", "S2"]

    def test_single_subject(self, tmp_path):
        with pytest.raises(IngestError, match="at least 2"):
            load_manifest(self.write(tmp_path, "fs=360\nsynth:hr=60,a,S1\nsynth:hr=61,a,S2\n"))

    def test_duplicate(self, tmp_path):
        with pytest.raises(IngestError, match="duplicate"):
            load_manifest(self.write(tmp_path, "fs=360\nsynth:hr=60,a,S1\nsynth:hr=60,a,S1\nsynth:hr=60,b,S1\n"))

    @pytest.mark.parametrize("line", ["only,two", "x,,S1", "synth:hr,a,S1", "synth:zz_amp=1,a,S1", "foo=1"])
    def test_malformed(self, tmp_path, line):
        with pytest.raises(IngestError):
            load_manifest(self.write(tmp_path, f"fs=360\nsynth:hr=60,b,S1\n{line}\n"))

    def test_synthetic_needs_fs(self, tmp_path):
        with pytest.raises(IngestError, match="fs="):
            load_manifest(self.write(tmp_path, "synth:hr=60,a,S1\nsynth:hr=60,b,S1\n"))

    def test_mixed_sources(self, tmp_path):
        rec, _, _ = synth_ecg(SyntheticEcgSpec(heart_rate_bpm=72), 4, 360)
        write_wfdb_record(tmp_path, "real", rec.samples, 360)
        m = load_manifest(self.write(tmp_path, "fs=360\nreal.hea,a,S1\n"
                                               "synth:hr=72;duration=4;p_amp=0.2,b,S1\n"))
        recs = load_records(m)
        assert [r.subject_id for r in recs] == ["a", "b"]
        np.testing.assert_allclose(recs[0].samples, rec.samples, atol=0.5 / 200 + 1e-12)
        assert recs[1].samples.size == 4 * 360
        assert load_manifest(tmp_path / "m.txt") == m  # idempotent


def test_subject_specs_differ():
    a, b = subject_spec(0), subject_spec(1)
    assert a.waves != b.waves
    assert subject_spec(0) == a
    assert isinstance(a.waves["P"], WaveBump)
