"""ECG record ingestion: WFDB reader/writer, synthetic ECG, dataset manifests."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

WAVE_NAMES = ("P", "Q", "R", "S", "T")
SUPPORTED_FORMATS = (16, 212)
# Gaussian bump falls to 10% of its peak at this many standard deviations.
TEN_PERCENT_SIGMAS = math.sqrt(2.0 * math.log(10.0))


class IngestError(ValueError):
    """Raised for unreadable records, malformed manifests or bad synthetic specs."""


@dataclass
class EcgRecord:
    """One lead of sampled ECG, amplitudes in millivolts."""

    subject_id: str
    session_id: str
    lead_name: str
    sampling_rate_hz: float
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if not self.sampling_rate_hz > 0:
            raise IngestError(f"sampling_rate_hz must be positive, got {self.sampling_rate_hz}")
        if self.samples.size == 0:
            raise IngestError("record has no samples")
        if not np.all(np.isfinite(self.samples)):
            raise IngestError("record contains non-finite samples")

    @property
    def fs(self) -> float:
        return self.sampling_rate_hz

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sampling_rate_hz

    def truncated(self, seconds: float) -> "EcgRecord":
        """Return the first ``seconds`` of the record (whole record if shorter)."""
        n = int(round(seconds * self.sampling_rate_hz))
        if n >= self.samples.size:
            logger.info(
                "record %s/%s is %.1f s, shorter than the requested %.1f s; using full length",
                self.subject_id, self.session_id, self.duration_s, seconds,
            )
            return self
        return replace(self, samples=self.samples[:n].copy())


# ---------------------------------------------------------------------------
# WFDB format 212 / 16
# ---------------------------------------------------------------------------

def pack_212(values: Sequence[int]) -> bytes:
    """Pack signed 12-bit integers into WFDB format 212 bytes."""
    v = np.asarray(values, dtype=np.int64)
    if v.size and (v.min() < -2048 or v.max() > 2047):
        raise IngestError("format 212 holds values in [-2048, 2047]")
    u = (v & 0xFFF).astype(np.uint16)
    odd = u.size % 2
    if odd:
        u = np.append(u, 0)
    s0, s1 = u[0::2], u[1::2]
    out = np.empty((s0.size, 3), dtype=np.uint8)
    out[:, 0] = s0 & 0xFF
    out[:, 1] = ((s1 >> 8) << 4) | (s0 >> 8)
    out[:, 2] = s1 & 0xFF
    data = out.tobytes()
    # an odd trailing sample occupies two bytes
    return data[:-1] if odd else data


def unpack_212(data: bytes, n_values: int | None = None) -> np.ndarray:
    """Decode WFDB format 212 bytes into signed integers."""
    raw = np.frombuffer(data, dtype=np.uint8)
    n_avail = (raw.size // 3) * 2 + (1 if raw.size % 3 >= 2 else 0)
    if n_values is None:
        n_values = n_avail
    if n_values > n_avail:
        raise IngestError(f"truncated format-212 data: need {n_values} samples, have {n_avail}")
    pad = (-raw.size) % 3
    b = np.concatenate([raw, np.zeros(pad, dtype=np.uint8)]).reshape(-1, 3).astype(np.int32)
    s0 = b[:, 0] | ((b[:, 1] & 0x0F) << 8)
    s1 = b[:, 2] | ((b[:, 1] >> 4) << 8)
    out = np.empty(2 * b.shape[0], dtype=np.int32)
    out[0::2] = s0
    out[1::2] = s1
    out = out[:n_values]
    out[out > 2047] -= 4096
    return out


def _parse_gain(token: str) -> tuple[float, float | None]:
    # "200", "200/mV", "200(1024)/mV"
    token = token.split("/")[0]
    baseline = None
    if "(" in token:
        token, rest = token.split("(", 1)
        baseline = float(rest.rstrip(")"))
    gain = float(token) if token else 200.0
    return (gain if gain != 0 else 200.0), baseline


@dataclass
class WfdbHeader:
    record_name: str
    n_signals: int
    fs: float
    n_samples: int | None
    files: list[str]
    formats: list[int]
    gains: list[float]
    baselines: list[float]
    lead_names: list[str]


def read_wfdb_header(header_path: str | os.PathLike) -> WfdbHeader:
    path = Path(header_path)
    if not path.exists():
        raise IngestError(f"header file not found: {path}")
    lines = [ln.strip() for ln in path.read_text().splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise IngestError(f"empty header: {path}")
    head = lines[0].split()
    if len(head) < 2:
        raise IngestError(f"malformed record line in {path}: {lines[0]!r}")
    record_name = head[0].split("/")[0]
    n_signals = int(head[1])
    fs = float(head[2].split("/")[0]) if len(head) > 2 else 250.0
    n_samples = int(head[3]) if len(head) > 3 else None
    if len(lines) < 1 + n_signals:
        raise IngestError(f"header declares {n_signals} signals but lists {len(lines) - 1}")
    files, formats, gains, baselines, names = [], [], [], [], []
    for i, line in enumerate(lines[1:1 + n_signals]):
        tok = line.split()
        if len(tok) < 2:
            raise IngestError(f"malformed signal line: {line!r}")
        files.append(tok[0])
        fmt = int(tok[1].split("x")[0].split(":")[0].split("+")[0])
        formats.append(fmt)
        gain, baseline = _parse_gain(tok[2]) if len(tok) > 2 else (200.0, None)
        if baseline is None:
            # ADC zero doubles as the baseline when no explicit one is given
            baseline = float(tok[4]) if len(tok) > 4 else 0.0
        gains.append(gain)
        baselines.append(baseline)
        names.append(" ".join(tok[8:]) if len(tok) > 8 else f"ch{i}")
    return WfdbHeader(record_name, n_signals, fs, n_samples, files, formats, gains, baselines, names)


def _read_digital(header: WfdbHeader, directory: Path) -> np.ndarray:
    if len(set(header.files)) != 1 or len(set(header.formats)) != 1:
        raise IngestError("only records with all signals in a single file and format are supported")
    fmt = header.formats[0]
    if fmt not in SUPPORTED_FORMATS:
        raise IngestError(f"unsupported WFDB format code {fmt}; supported: {SUPPORTED_FORMATS}")
    dat = directory / header.files[0]
    if not dat.exists():
        raise IngestError(f"signal file not found: {dat}")
    data = dat.read_bytes()
    nsig = header.n_signals
    if fmt == 16:
        n_avail = len(data) // 2
        values = np.frombuffer(data[: n_avail * 2], dtype="<i2").astype(np.int32)
    else:
        values = unpack_212(data)
        n_avail = values.size
    if header.n_samples:
        need = header.n_samples * nsig
        if n_avail < need:
            raise IngestError(f"truncated signal file {dat}: need {need} values, found {n_avail}")
        values = values[:need]
    else:
        values = values[: (values.size // nsig) * nsig]
    return values.reshape(-1, nsig)


def read_wfdb_record(
    header_path: str | os.PathLike,
    lead: str | int | None = None,
    subject_id: str | None = None,
    session_id: str | None = None,
) -> EcgRecord:
    """Read one lead of a WFDB record (format 16 or 212) in millivolts.

    ``lead`` selects a channel by description or index; the first channel is
    used when omitted. Subject and session default to the record name.
    """
    path = Path(header_path)
    header = read_wfdb_header(path)
    digital = _read_digital(header, path.parent)
    if lead is None:
        idx = 0
    elif isinstance(lead, int):
        idx = lead
        if not 0 <= idx < header.n_signals:
            raise IngestError(f"lead index {lead} absent; record has {header.n_signals} leads")
    else:
        if lead not in header.lead_names:
            raise IngestError(f"lead {lead!r} absent; available: {header.lead_names}")
        idx = header.lead_names.index(lead)
    mv = (digital[:, idx] - header.baselines[idx]) / header.gains[idx]
    return EcgRecord(
        subject_id=subject_id or header.record_name,
        session_id=session_id or header.record_name,
        lead_name=header.lead_names[idx],
        sampling_rate_hz=header.fs,
        samples=mv,
    )


def write_wfdb_record(
    directory: str | os.PathLike,
    record_name: str,
    signals_mv: np.ndarray,
    fs: float,
    fmt: int = 212,
    gain: float = 200.0,
    baseline: int = 0,
    lead_names: Sequence[str] | None = None,
) -> Path:
    """Write a WFDB header and signal file; returns the header path.

    ``signals_mv`` is ``(n_samples,)`` or ``(n_samples, n_leads)``.
    """
    if fmt not in SUPPORTED_FORMATS:
        raise IngestError(f"unsupported WFDB format code {fmt}")
    sig = np.asarray(signals_mv, dtype=np.float64)
    if sig.ndim == 1:
        sig = sig[:, None]
    nsamp, nsig = sig.shape  # (n_samples, n_leads)
    lo, hi = (-2048, 2047) if fmt == 212 else (-32768, 32767)
    digital = np.clip(np.round(sig * gain + baseline), lo, hi).astype(np.int64)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    dat_name = f"{record_name}.dat"
    flat = digital.reshape(-1)
    payload = pack_212(flat) if fmt == 212 else flat.astype("<i2").tobytes()
    (directory / dat_name).write_bytes(payload)
    names = list(lead_names) if lead_names else [f"ch{i}" for i in range(nsig)]
    lines = [f"{record_name} {nsig} {fs:g} {nsamp}"]
    adc_res = 12 if fmt == 212 else 16
    for i in range(nsig):
        lines.append(
            f"{dat_name} {fmt} {gain:g}({baseline})/mV {adc_res} {baseline} "
            f"{int(digital[0, i])} 0 0 {names[i]}"
        )
    hea = directory / f"{record_name}.hea"
    hea.write_text("\n".join(lines) + "\n")
    return hea


# ---------------------------------------------------------------------------
# Synthetic ECG
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WaveBump:
    """Gaussian bump: amplitude (mV), center offset from R (ms), width = std (ms)."""

    amplitude: float
    center_ms: float
    width_ms: float


def _default_waves() -> dict[str, WaveBump]:
    return {
        "P": WaveBump(0.15, -160.0, 23.0),
        "Q": WaveBump(-0.15, -35.0, 10.0),
        "R": WaveBump(1.0, 0.0, 10.0),
        "S": WaveBump(-0.25, 35.0, 10.0),
        "T": WaveBump(0.30, 300.0, 40.0),
    }


@dataclass(frozen=True)
class SyntheticEcgSpec:
    heart_rate_bpm: float = 60.0
    waves: dict[str, WaveBump] = field(default_factory=_default_waves)
    noise_std_mv: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.heart_rate_bpm > 0:
            raise IngestError("heart_rate_bpm must be positive")
        if set(self.waves) != set(WAVE_NAMES):
            raise IngestError(f"waves must define exactly {WAVE_NAMES}")
        if self.waves["R"].center_ms != 0:
            raise IngestError("R bump is the beat reference; its center offset must be 0")
        centers = [self.waves[w].center_ms for w in WAVE_NAMES]
        if any(b <= a for a, b in zip(centers, centers[1:])):
            raise IngestError("wave centers must be ordered P < Q < R < S < T")
        if any(self.waves[w].width_ms <= 0 for w in WAVE_NAMES):
            raise IngestError("wave widths must be positive")
        if self.noise_std_mv < 0:
            raise IngestError("noise_std_mv must be non-negative")

    def with_wave(self, name: str, **changes) -> "SyntheticEcgSpec":
        if name not in self.waves:
            raise IngestError(f"unknown wave {name!r}; expected one of {WAVE_NAMES}")
        waves = dict(self.waves)
        waves[name] = replace(waves[name], **changes)
        return replace(self, waves=waves)


def subject_spec(subject_index: int, seed: int = 0, noise_std_mv: float = 0.02,
                 heart_rate_bpm: float | None = None) -> SyntheticEcgSpec:
    """Draw a subject-specific morphology that stays inside delineation ranges."""
    rng = np.random.default_rng([seed, subject_index])
    base = _default_waves()
    jitter = {
        "P": WaveBump(rng.uniform(0.08, 0.25), rng.uniform(-175, -150), rng.uniform(20.0, 26.0)),
        "Q": WaveBump(rng.uniform(-0.3, -0.05), rng.uniform(-42, -30), rng.uniform(7.0, 12.0)),
        "R": WaveBump(rng.uniform(0.8, 1.6), 0.0, rng.uniform(8.0, 13.0)),
        "S": WaveBump(rng.uniform(-0.5, -0.1), rng.uniform(30, 45), rng.uniform(7.0, 13.0)),
        "T": WaveBump(rng.uniform(0.15, 0.5), rng.uniform(260, 320), rng.uniform(32.0, 48.0)),
    }
    base.update(jitter)
    hr = heart_rate_bpm if heart_rate_bpm is not None else float(rng.uniform(58, 72))
    return SyntheticEcgSpec(heart_rate_bpm=hr, waves=base, noise_std_mv=noise_std_mv,
                            seed=int(rng.integers(2**31)))


def synth_ecg(
    spec: SyntheticEcgSpec,
    duration_s: float,
    fs: float,
    subject_id: str = "synthetic",
    session_id: str = "S1",
) -> tuple[EcgRecord, np.ndarray, list[dict[str, tuple[int, int, int]]]]:
    """Generate a periodic Gaussian-bump ECG with known fiducials.

    Returns the record, the exact R-peak sample indices, and per-beat ground
    truth ``{wave: (onset, peak, offset)}`` where onset/offset are the points
    at which each bump has fallen to 10% of its amplitude.
    """
    if fs < 100:
        raise IngestError(f"fs={fs} Hz cannot resolve the QRS complex (need >= 100)")
    rr_s = 60.0 / spec.heart_rate_bpm
    if duration_s < 2 * rr_s:
        raise IngestError(f"duration {duration_s} s is shorter than two beats ({2 * rr_s:.3f} s)")
    n = int(round(duration_s * fs))
    t = np.arange(n, dtype=np.float64)
    rr = rr_s * fs
    r0 = int(round(0.5 * rr))
    k_lo = -2
    k_hi = int(math.ceil((n - r0) / rr)) + 2
    centers = np.array([r0 + int(round(k * rr)) for k in range(k_lo, k_hi)], dtype=np.int64)
    signal = np.zeros(n)
    for name in WAVE_NAMES:
        w = spec.waves[name]
        sig = w.width_ms * fs / 1000.0
        offs = w.center_ms * fs / 1000.0
        for c in centers:
            mu = c + offs
            lo, hi = int(max(0, mu - 8 * sig)), int(min(n, mu + 8 * sig + 1))
            if lo < hi:
                signal[lo:hi] += w.amplitude * np.exp(-0.5 * ((t[lo:hi] - mu) / sig) ** 2)
    if spec.noise_std_mv > 0:
        rng = np.random.default_rng(spec.seed)
        signal = signal + rng.normal(0.0, spec.noise_std_mv, n)
    r_idx = centers[(centers >= 0) & (centers < n)]
    truth = []
    for c in r_idx:
        beat = {}
        for name in WAVE_NAMES:
            w = spec.waves[name]
            mu = c + w.center_ms * fs / 1000.0
            half = TEN_PERCENT_SIGMAS * w.width_ms * fs / 1000.0
            beat[name] = (int(round(mu - half)), int(round(mu)), int(round(mu + half)))
        truth.append(beat)
    record = EcgRecord(subject_id, session_id, "synthetic", float(fs), signal)
    return record, r_idx, truth


def warp_spec(spec: SyntheticEcgSpec, factor: float) -> SyntheticEcgSpec:
    """Stretch every non-R bump's offset and width by ``factor`` (morphology time warp)."""
    if factor <= 0:
        raise IngestError("warp factor must be positive")
    waves = {name: replace(w, center_ms=w.center_ms * factor, width_ms=w.width_ms * factor)
             for name, w in spec.waves.items()}
    return replace(spec, waves=waves)


def synthetic_cohort(n_subjects: int, duration_s: float = 30.0, fs: float = 360.0,
                     noise_std_mv: float = 0.01, seed: int = 0, sessions: Sequence[str] = ("S1",),
                     session_warp: float = 0.0) -> list[EcgRecord]:
    """One record per (subject, session) with subject-specific morphology.

    Later sessions reuse the subject's morphology with fresh noise; with
    ``session_warp`` > 0 session ``j`` is time-warped by ``(1 + warp) ** j``.
    """
    if n_subjects < 2:
        raise IngestError("a cohort needs at least 2 subjects")
    records = []
    for i in range(n_subjects):
        base = subject_spec(i, seed=seed, noise_std_mv=noise_std_mv)
        for j, session in enumerate(sessions):
            spec = replace(base, seed=base.seed + 7919 * j)
            if session_warp and j > 0:
                spec = warp_spec(spec, (1.0 + session_warp) ** j)
            rec, _, _ = synth_ecg(spec, duration_s, fs, subject_id=f"subj{i:02d}", session_id=session)
            records.append(rec)
    return records


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

_SYNTH_KEYS = {
    "hr": "heart_rate_bpm",
    "noise": "noise_std_mv",
    "seed": "seed",
}


@dataclass(frozen=True)
class ManifestEntry:
    source: str
    subject_id: str
    session_id: str
    lead: str | None = None
    synthetic: SyntheticEcgSpec | None = None
    duration_s: float | None = None

    @property
    def is_synthetic(self) -> bool:
        return self.synthetic is not None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    sampling_rate_hz: float | None = None

    @property
    def subjects(self) -> list[str]:
        seen: dict[str, None] = {}
        for e in self.entries:
            seen.setdefault(e.subject_id, None)
        return list(seen)

    @property
    def sessions(self) -> list[str]:
        seen: dict[str, None] = {}
        for e in self.entries:
            seen.setdefault(e.session_id, None)
        return list(seen)


def parse_synthetic_source(text: str) -> tuple[SyntheticEcgSpec, float]:
    """Parse ``synth:key=value;...`` into a spec and a duration.

    Keys: ``hr``, ``noise``, ``seed``, ``duration``, ``subject`` (draws a
    subject morphology via :func:`subject_spec`), and per-wave
    ``<wave>_amp``, ``<wave>_center``, ``<wave>_width`` (e.g. ``p_amp``).
    """
    body = text.split(":", 1)[1]
    params: dict[str, str] = {}
    for item in filter(None, (p.strip() for p in body.split(";"))):
        if "=" not in item:
            raise IngestError(f"bad synthetic parameter {item!r}")
        k, v = item.split("=", 1)
        params[k.strip().lower()] = v.strip()
    duration = float(params.pop("duration", 20.0))
    if "subject" in params:
        spec = subject_spec(int(params.pop("subject")), seed=int(params.get("seed", 0)))
    else:
        spec = SyntheticEcgSpec()
    scalar = {}
    for k in list(params):
        if k in _SYNTH_KEYS:
            field_name = _SYNTH_KEYS[k]
            scalar[field_name] = int(params.pop(k)) if field_name == "seed" else float(params.pop(k))
    spec = replace(spec, **scalar)
    for k, v in params.items():
        try:
            wave, attr = k.split("_", 1)
            attr = {"amp": "amplitude", "center": "center_ms", "width": "width_ms"}[attr]
        except (ValueError, KeyError):
            raise IngestError(f"unknown synthetic parameter {k!r}") from None
        spec = spec.with_wave(wave.upper(), **{attr: float(v)})
    return spec, duration


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Load a manifest: ``source,subject,session[,lead]`` lines.

    ``#`` starts a comment; a ``fs=<Hz>`` line declares the sampling rate
    (required when synthetic entries are present). Relative record paths
    are resolved against the manifest's directory.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"manifest not found: {path}")
    entries: list[ManifestEntry] = []
    fs = None
    seen = set()
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "," not in line and "=" in line:
            key, value = (s.strip() for s in line.split("=", 1))
            if key.lower() in ("fs", "sampling_rate_hz"):
                fs = float(value)
                continue
            raise IngestError(f"{path}:{lineno}: unknown directive {key!r}")
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (3, 4) or not all(parts[:3]):
            raise IngestError(f"{path}:{lineno}: expected 'source,subject,session[,lead]'")
        source, subject, session = parts[:3]
        lead = parts[3] if len(parts) == 4 and parts[3] else None
        synthetic = duration = None
        if source.startswith("synth:"):
            try:
                synthetic, duration = parse_synthetic_source(source)
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from None
        else:
            p = Path(source)
            if not p.is_absolute():
                source = str((path.parent / p).resolve())
        key = (subject, session, source)
        if key in seen:
            raise IngestError(f"{path}:{lineno}: duplicate entry {key}")
        seen.add(key)
        entries.append(ManifestEntry(source, subject, session, lead, synthetic, duration))
    manifest = DatasetManifest(entries, fs)
    if len(manifest.subjects) < 2:
        raise IngestError(f"{path}: identification needs at least 2 subjects, found {len(manifest.subjects)}")
    if any(e.is_synthetic for e in entries) and fs is None:
        raise IngestError(f"{path}: synthetic entries need an 'fs=<Hz>' line")
    return manifest


def load_records(manifest: DatasetManifest, max_duration_s: float | None = None) -> list[EcgRecord]:
    """Resolve every manifest entry to an :class:`EcgRecord`, in manifest order."""
    records = []
    for e in manifest.entries:
        if e.is_synthetic:
            rec, _, _ = synth_ecg(e.synthetic, e.duration_s, manifest.sampling_rate_hz,
                                  subject_id=e.subject_id, session_id=e.session_id)
        else:
            rec = read_wfdb_record(e.source, lead=e.lead, subject_id=e.subject_id,
                                   session_id=e.session_id)
            if manifest.sampling_rate_hz and rec.sampling_rate_hz != manifest.sampling_rate_hz:
                logger.warning("%s: header fs %.1f differs from manifest fs %.1f",
                               e.source, rec.sampling_rate_hz, manifest.sampling_rate_hz)
        if max_duration_s is not None:
            rec = rec.truncated(max_duration_s)
        records.append(rec)
    return records


# ---------------------------------------------------------------------------
# JSON-lines record store
# ---------------------------------------------------------------------------

def write_records_jsonl(records: Sequence[EcgRecord], path: str | os.PathLike,
                        header_lines: Sequence[str] = ()) -> None:
    """One JSON object per record, preceded by ``# `` comment lines."""
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        for r in records:
            fh.write(json.dumps({
                "subject_id": r.subject_id, "session_id": r.session_id, "lead_name": r.lead_name,
                "sampling_rate_hz": r.sampling_rate_hz, "samples": [float(v) for v in r.samples],
            }) + "\n")


def read_records_jsonl(path: str | os.PathLike) -> tuple[list[EcgRecord], list[str]]:
    """Return the records and the header comment lines (without ``# ``)."""
    records, comments = [], []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if line.startswith("#"):
                comments.append(line[1:].strip())
                continue
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(EcgRecord(obj["subject_id"], obj["session_id"], obj.get("lead_name", ""),
                                         float(obj["sampling_rate_hz"]), np.asarray(obj["samples"], float)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise IngestError(f"{path}:{n}: malformed record line ({exc})") from None
    if not records:
        raise IngestError(f"{path}: no records")
    return records, comments
