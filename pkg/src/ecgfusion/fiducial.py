"""R-peak detection (Pan-Tompkins) and rule-based P/QRS/T delineation."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks, lfilter

from .ingest import EcgRecord

DESIGN_FS = 200.0
REFRACTORY_S = 0.200
T_WAVE_WINDOW_S = 0.360
MWI_WINDOW_S = 0.150
REFINE_S = 0.050

# Delineation windows, in ms relative to R.
QRS_HALF_MS = 60.0
P_WINDOW_MS = (-200.0, -100.0)
T_WINDOW_MS = (150.0, 400.0)
BASELINE_MS = (-90.0, -60.0)
P_SCAN_LIMIT_MS = -350.0
T_SCAN_LIMIT_MS = 600.0
P_DURATION_MS = (80.0, 120.0)
T_DURATION_MS = (120.0, 240.0)
BOUNDARY_FRACTION = 0.10
MIN_WAVE_FRACTION = 0.05


class DetectionError(ValueError):
    """Raised when a record cannot be searched for QRS complexes."""


@dataclass
class RPeakList:
    indices: np.ndarray
    fs: float

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


def _resample(x: np.ndarray, fs_from: float, fs_to: float) -> np.ndarray:
    n_out = int(np.floor((x.size - 1) * fs_to / fs_from)) + 1
    t_out = np.arange(n_out) / fs_to
    t_in = np.arange(x.size) / fs_from
    return np.interp(t_out, t_in, x)


def _shift(x: np.ndarray, delay: int) -> np.ndarray:
    out = np.zeros_like(x)
    out[: x.size - delay] = x[delay:]
    return out


def pan_tompkins_stages(x: np.ndarray) -> dict[str, np.ndarray]:
    """Run the filter cascade on a signal sampled at 200 Hz.

    Every stage is delay-compensated so indices line up with the input.
    """
    x = np.asarray(x, dtype=np.float64) - np.mean(x)
    # low-pass y(n) = 2y(n-1) - y(n-2) + x(n) - 2x(n-6) + x(n-12), delay 5
    b_lp = np.zeros(13)
    b_lp[[0, 6, 12]] = [1.0, -2.0, 1.0]
    lp = _shift(lfilter(b_lp, [1.0, -2.0, 1.0], x) / 36.0, 5)
    # high-pass y(n) = x(n-16) - (1/32) sum_{k<32} x(n-k), delay 16
    b_hp = np.zeros(33)
    b_hp[0], b_hp[16], b_hp[17], b_hp[32] = -1.0 / 32, 1.0, -1.0, 1.0 / 32
    bp = _shift(lfilter(b_hp, [1.0, -1.0], lp), 16)
    # five-point derivative, centered
    deriv = np.convolve(bp, np.array([2.0, 1.0, 0.0, -1.0, -2.0]) / 8.0, mode="same")
    squared = deriv ** 2
    n_win = int(round(MWI_WINDOW_S * DESIGN_FS))
    integrated = np.convolve(squared, np.ones(n_win) / n_win, mode="same")
    return {"bandpass": bp, "derivative": deriv, "squared": squared, "integrated": integrated}


def _qrs_search(stages: dict[str, np.ndarray], fs: float) -> list[int]:
    bp = np.abs(stages["bandpass"])
    deriv = np.abs(stages["derivative"])
    mwi = stages["integrated"]
    refractory = int(round(REFRACTORY_S * fs))
    t_window = int(round(T_WAVE_WINDOW_S * fs))
    half = int(round(0.075 * fs))

    candidates, _ = find_peaks(mwi, distance=refractory)
    if candidates.size == 0:
        return []

    learn = slice(0, int(2 * fs))
    spki, npki = mwi[learn].max() / 3.0, mwi[learn].mean() / 2.0
    spkf, npkf = bp[learn].max() / 3.0, bp[learn].mean() / 2.0

    def local(arr, i):
        return arr[max(0, i - half): i + half + 1].max()

    peaks_f = np.array([local(bp, i) for i in candidates])
    slopes = np.array([local(deriv, i) for i in candidates])

    qrs: list[int] = []
    qrs_slope: list[float] = []
    rr: list[int] = []
    last_cand = -1  # position in candidates of the last accepted QRS

    def thresholds():
        thr_i = npki + 0.25 * (spki - npki)
        thr_f = npkf + 0.25 * (spkf - npkf)
        return thr_i, thr_f

    for k, i in enumerate(candidates):
        pk_i, pk_f = mwi[i], peaks_f[k]
        thr_i, thr_f = thresholds()

        # search back for a missed beat with the secondary (halved) thresholds
        if qrs and len(rr) >= 1:
            rr_avg = np.mean(rr[-8:])
            if i - qrs[-1] > 1.66 * rr_avg:
                pool = [j for j in range(last_cand + 1, k)
                        if candidates[j] - qrs[-1] > refractory
                        and i - candidates[j] > refractory
                        and mwi[candidates[j]] >= 0.5 * thr_i
                        and peaks_f[j] >= 0.5 * thr_f]
                if pool:
                    j = max(pool, key=lambda j: mwi[candidates[j]])
                    rr.append(candidates[j] - qrs[-1])
                    qrs.append(int(candidates[j]))
                    qrs_slope.append(slopes[j])
                    last_cand = j
                    spki = 0.25 * mwi[candidates[j]] + 0.75 * spki
                    spkf = 0.25 * peaks_f[j] + 0.75 * spkf
                    thr_i, thr_f = thresholds()

        if qrs and i - qrs[-1] < refractory:
            continue
        if pk_i >= thr_i and pk_f >= thr_f:
            if qrs and i - qrs[-1] < t_window and slopes[k] < 0.5 * qrs_slope[-1]:
                # T-wave: steep enough to pass thresholds but too slow for a QRS
                npki = 0.125 * pk_i + 0.875 * npki
                npkf = 0.125 * pk_f + 0.875 * npkf
                continue
            if qrs:
                rr.append(i - qrs[-1])
            qrs.append(int(i))
            qrs_slope.append(slopes[k])
            last_cand = k
            spki = 0.125 * pk_i + 0.875 * spki
            spkf = 0.125 * pk_f + 0.875 * spkf
        else:
            npki = 0.125 * pk_i + 0.875 * npki
            npkf = 0.125 * pk_f + 0.875 * npkf
    return qrs


def detect_r_peaks(record: EcgRecord) -> RPeakList:
    """Locate R-peaks with the Pan-Tompkins cascade and dual adaptive thresholds.

    The record is resampled to the 200 Hz design rate of the integer
    filters; detections are mapped back and refined to the signal maximum
    within +/-50 ms.
    """
    x = record.samples
    fs = record.sampling_rate_hz
    if fs < 100:
        raise DetectionError(f"fs={fs} Hz is too low for QRS detection (need >= 100)")
    if record.duration_s < 2.0:
        raise DetectionError(f"record is {record.duration_s:.2f} s; need at least 2 s")
    if not np.std(x) > 0:
        raise DetectionError("flat signal: zero variance")

    x200 = x if fs == DESIGN_FS else _resample(x, fs, DESIGN_FS)
    stages = pan_tompkins_stages(x200)
    coarse = _qrs_search(stages, DESIGN_FS)

    half = int(round(REFINE_S * fs))
    refractory = int(round(REFRACTORY_S * fs))
    refined: list[int] = []
    for i in coarse:
        c = int(round(i * fs / DESIGN_FS))
        lo, hi = max(0, c - half), min(x.size, c + half + 1)
        if lo >= hi:
            continue
        r = lo + int(np.argmax(x[lo:hi]))
        if refined and r - refined[-1] < refractory:
            if x[r] > x[refined[-1]]:
                refined[-1] = r
            continue
        refined.append(r)
    return RPeakList(np.asarray(refined, dtype=np.int64), fs)


@dataclass
class FiducialMarks:
    """Per-beat fiducial sample indices; -1 marks a point that was not found."""

    p_onset: int = -1
    p_peak: int = -1
    p_offset: int = -1
    q: int = -1
    r: int = -1
    s: int = -1
    t_onset: int = -1
    t_peak: int = -1
    t_offset: int = -1
    valid: bool = False
    reason: str = ""

    POINTS = ("p_onset", "p_peak", "p_offset", "q", "r", "s", "t_onset", "t_peak", "t_offset")

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(getattr(self, name) for name in self.POINTS)

    def is_ordered(self) -> bool:
        pts = self.as_tuple()
        return all(a < b for a, b in zip(pts, pts[1:]))

    def p_duration_ms(self, fs: float) -> float:
        return (self.p_offset - self.p_onset) * 1000.0 / fs

    def t_duration_ms(self, fs: float) -> float:
        return (self.t_offset - self.t_onset) * 1000.0 / fs


def _ms(ms: float, fs: float) -> int:
    return int(round(ms * fs / 1000.0))


def _scan(dev: np.ndarray, start: int, step: int, level: float, limit: int) -> int | None:
    """First index from ``start`` (moving by ``step``) where ``dev`` drops to ``level``."""
    j = start
    while (j > limit if step < 0 else j < limit):
        j += step
        if dev[j] <= level:
            return j
    return None


def _delineate_beat(x: np.ndarray, fs: float, k: int, r_peaks: np.ndarray) -> FiducialMarks:
    r = int(r_peaks[k])
    n = x.size
    m = FiducialMarks(r=r)
    prev_r = int(r_peaks[k - 1]) if k > 0 else None
    next_r = int(r_peaks[k + 1]) if k + 1 < len(r_peaks) else None

    p_lo, p_hi = r + _ms(P_WINDOW_MS[0], fs), r + _ms(P_WINDOW_MS[1], fs)
    p_limit = r + _ms(P_SCAN_LIMIT_MS, fs)
    t_lo, t_hi = r + _ms(T_WINDOW_MS[0], fs), r + _ms(T_WINDOW_MS[1], fs)
    t_limit = r + _ms(T_SCAN_LIMIT_MS, fs)
    if prev_r is not None:
        # never scan into the previous beat's repolarization
        p_limit = max(p_limit, prev_r + _ms(T_WINDOW_MS[0], fs))
    if next_r is not None:
        # stop short of the next beat's P search window
        t_hi = min(t_hi, next_r + _ms(P_WINDOW_MS[0], fs))
        t_limit = min(t_limit, next_r + _ms(P_WINDOW_MS[0], fs))
    if p_limit < 0 or t_limit >= n:
        m.reason = "incomplete window"
        return m

    qh = _ms(QRS_HALF_MS, fs)
    m.q = r - qh + int(np.argmin(x[r - qh: r]))
    m.s = r + 1 + int(np.argmin(x[r + 1: r + qh + 1]))

    baseline = float(np.median(x[r + _ms(BASELINE_MS[0], fs): r + _ms(BASELINE_MS[1], fs) + 1]))
    r_amp = x[r] - baseline
    if r_amp <= 0:
        m.reason = "R below baseline"
        return m

    # P wave
    dev = x - baseline
    p_rel = int(np.argmax(dev[p_lo: p_hi + 1]))
    p_amp = dev[p_lo + p_rel]
    if p_amp < MIN_WAVE_FRACTION * r_amp or p_rel in (0, p_hi - p_lo):
        m.reason = "P not found"
        return m
    m.p_peak = p_lo + p_rel
    level = BOUNDARY_FRACTION * p_amp
    on = _scan(dev, m.p_peak, -1, level, p_limit)
    off = _scan(dev, m.p_peak, +1, level, m.q)
    if on is None or off is None:
        m.reason = "P boundary not found"
        return m
    m.p_onset, m.p_offset = on, off

    # T wave, either polarity
    if t_hi <= t_lo:
        m.reason = "T window empty"
        return m
    t_rel = int(np.argmax(np.abs(dev[t_lo: t_hi + 1])))
    m.t_peak = t_lo + t_rel
    sign = 1.0 if dev[m.t_peak] >= 0 else -1.0
    t_amp = abs(dev[m.t_peak])
    if t_amp < MIN_WAVE_FRACTION * r_amp or t_rel in (0, t_hi - t_lo):
        m.reason = "T not found"
        return m
    signed = sign * dev
    level = BOUNDARY_FRACTION * t_amp
    on = _scan(signed, m.t_peak, -1, level, m.s)
    off = _scan(signed, m.t_peak, +1, level, t_limit)
    if on is None or off is None:
        m.reason = "T boundary not found"
        return m
    m.t_onset, m.t_offset = on, off

    if not m.is_ordered():
        m.reason = "fiducial order violated"
        return m
    p_dur, t_dur = m.p_duration_ms(fs), m.t_duration_ms(fs)
    if not P_DURATION_MS[0] <= p_dur <= P_DURATION_MS[1]:
        m.reason = f"P duration {p_dur:.0f} ms out of range"
        return m
    if not T_DURATION_MS[0] <= t_dur <= T_DURATION_MS[1]:
        m.reason = f"T duration {t_dur:.0f} ms out of range"
        return m
    m.valid = True
    return m


def delineate(record: EcgRecord, r_peaks) -> list[FiducialMarks]:
    """Delineate P, QRS and T around each R-peak.

    Beats whose search windows fall off the record, whose waves are not
    found, or whose P/T durations are implausible are returned with
    ``valid=False`` and a ``reason``.
    """
    idx = np.asarray(r_peaks.indices if isinstance(r_peaks, RPeakList) else r_peaks, dtype=np.int64)
    x = record.samples
    return [_delineate_beat(x, record.sampling_rate_hz, k, idx) for k in range(idx.size)]


def write_fiducial_table(marks: list[FiducialMarks], path: str | os.PathLike) -> None:
    """Dump per-beat fiducials as CSV: beat, nine indices, valid, reason."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beat", *FiducialMarks.POINTS, "valid", "reason"])
        for i, m in enumerate(marks):
            w.writerow([i, *m.as_tuple(), int(m.valid), m.reason])


def read_fiducial_table(path: str | os.PathLike) -> list[FiducialMarks]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {k: int(v) for k, v in row.items() if k in FiducialMarks.POINTS}
            out.append(FiducialMarks(**kw, valid=bool(int(row["valid"])), reason=row["reason"]))
    return out
