"""Heartbeat-level segmentation under four windowing strategies."""

from __future__ import annotations

import csv
import enum
import logging
import os
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .fiducial import FiducialMarks, delineate, detect_r_peaks
from .ingest import EcgRecord
from .preprocess import SavGolConfig, savgol_filter

logger = logging.getLogger(__name__)

MIN_TARGET_LEN = 8
QRS_WINDOW_S = 0.300
RANDOM_WINDOW_S = 1.0


class SegmentationError(ValueError):
    pass


class SegmentStrategy(str, enum.Enum):
    PT = "pt"
    QRS_CENTRIC = "qrs"
    RR = "rr"
    RANDOM = "random"

    @classmethod
    def parse(cls, value: "str | SegmentStrategy") -> "SegmentStrategy":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"qrs_centric": "qrs", "qrs-centric": "qrs", "p-t": "pt", "r-r": "rr"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise SegmentationError(f"unknown strategy {value!r}; valid strategies: {valid}") from None


@dataclass
class Segment:
    subject_id: str
    session_id: str
    strategy: SegmentStrategy
    start: int
    end: int  # inclusive
    values: np.ndarray
    fs: float

    @property
    def target_len(self) -> int:
        return int(self.values.size)


def resample_linear(raw: np.ndarray, target_len: int) -> np.ndarray:
    """Linearly interpolate ``raw`` onto ``target_len`` points; endpoints are kept exactly."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 1:
        return np.full(target_len, raw[0])
    pos = np.linspace(0.0, raw.size - 1, target_len)
    out = np.interp(pos, np.arange(raw.size), raw)
    out[0], out[-1] = raw[0], raw[-1]
    return out


def random_window_starts(n_samples: int, window: int, count: int, seed: int) -> np.ndarray:
    """Sorted starts of ``count`` non-overlapping windows placed uniformly at random."""
    count = min(count, n_samples // window)
    if count <= 0:
        return np.zeros(0, dtype=np.int64)
    slack = n_samples - count * window
    rng = np.random.default_rng(seed)
    offsets = np.sort(rng.integers(0, slack + 1, size=count))
    return offsets + np.arange(count) * window


def extract_segments(
    record: EcgRecord,
    marks: Sequence[FiducialMarks],
    strategy: "str | SegmentStrategy",
    target_len: int = 256,
    seed: int = 0,
    max_instances: int | None = None,
) -> list[Segment]:
    """Cut one record into fixed-length heartbeat instances.

    Only beats flagged valid by delineation are used. ``max_instances``
    keeps the first N valid beats (RANDOM draws that many windows).
    """
    strategy = SegmentStrategy.parse(strategy)
    if target_len < MIN_TARGET_LEN:
        raise SegmentationError(f"target_len must be >= {MIN_TARGET_LEN}, got {target_len}")
    x = record.samples
    fs = record.sampling_rate_hz
    n = x.size
    valid = [k for k, m in enumerate(marks) if m.valid]
    if not valid:
        raise SegmentationError(f"record {record.subject_id}/{record.session_id} has no valid beats")

    bounds: list[tuple[int, int]] = []
    if strategy is SegmentStrategy.PT:
        bounds = [(marks[k].p_onset, marks[k].t_offset) for k in valid]
    elif strategy is SegmentStrategy.QRS_CENTRIC:
        width = int(round(QRS_WINDOW_S * fs))
        for k in valid:
            start = marks[k].r - width // 2
            bounds.append((start, start + width - 1))
    elif strategy is SegmentStrategy.RR:
        for k in valid:
            if k + 2 < len(marks):
                bounds.append((marks[k].r, marks[k + 2].r))
    else:
        width = int(round(RANDOM_WINDOW_S * fs))
        if n < width:
            raise SegmentationError("RANDOM segmentation needs a record of at least 1 s")
        count = len(valid) if max_instances is None else min(len(valid), max_instances)
        bounds = [(int(s), int(s) + width - 1) for s in random_window_starts(n, width, count, seed)]

    bounds = [(s, e) for s, e in bounds if 0 <= s < e < n]
    if max_instances is not None:
        bounds = bounds[:max_instances]
    if not bounds:
        raise SegmentationError(f"no {strategy.value} windows fit inside record {record.subject_id}")
    return [
        Segment(record.subject_id, record.session_id, strategy, s, e,
                resample_linear(x[s:e + 1], target_len), fs)
        for s, e in bounds
    ]


@dataclass
class SegmentationReport:
    n_beats: int = 0
    n_valid: int = 0
    n_segments: int = 0
    skipped_records: int = 0

    @property
    def exclusion_rate(self) -> float:
        return 1.0 - self.n_valid / self.n_beats if self.n_beats else 0.0


def segment_records(
    records: Iterable[EcgRecord],
    strategy: "str | SegmentStrategy" = SegmentStrategy.PT,
    target_len: int = 256,
    savgol: SavGolConfig | None = SavGolConfig(),
    max_instances: int | None = 20,
    seed: int = 0,
) -> tuple[list[Segment], SegmentationReport]:
    """Smooth, detect, delineate and segment every record.

    ``max_instances`` is a budget per (subject, session): the first N
    valid beats of each pair (in record order) are kept. Records yielding no valid
    beats are skipped and counted.
    """
    strategy = SegmentStrategy.parse(strategy)
    report = SegmentationReport()
    out: list[Segment] = []
    per_pair: dict[tuple[str, str], int] = {}
    for i, rec in enumerate(records):
        if savgol is not None:
            rec = replace(rec, samples=savgol_filter(rec.samples, savgol))
        marks = delineate(rec, detect_r_peaks(rec))
        report.n_beats += len(marks)
        report.n_valid += sum(m.valid for m in marks)
        budget = None
        if max_instances is not None:
            budget = max_instances - per_pair.get((rec.subject_id, rec.session_id), 0)
            if budget <= 0:
                continue
        try:
            segs = extract_segments(rec, marks, strategy, target_len, seed=seed + i, max_instances=budget)
        except SegmentationError as exc:
            logger.warning("skipping record: %s", exc)
            report.skipped_records += 1
            continue
        key = (rec.subject_id, rec.session_id)
        per_pair[key] = per_pair.get(key, 0) + len(segs)
        out.extend(segs)
    report.n_segments = len(out)
    if report.n_beats:
        logger.info("excluded %.1f%% of %d beats as invalid", 100 * report.exclusion_rate, report.n_beats)
    return out, report


def segments_to_arrays(segments: Sequence[Segment]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack segments into ``X`` (n, target_len), subject labels and session labels."""
    if not segments:
        raise SegmentationError("no segments")
    X = np.vstack([s.values for s in segments])
    y = np.array([s.subject_id for s in segments])
    sessions = np.array([s.session_id for s in segments])
    return X, y, sessions


STORE_COLUMNS = ["subject_id", "session_id", "strategy", "start", "end", "target_len", "fs"]


def write_segment_store(segments: Sequence[Segment], path: str | os.PathLike,
                        header_lines: Sequence[str] = ()) -> None:
    """Write segments as CSV: metadata columns followed by ``v0..v{L-1}``."""
    if not segments:
        raise SegmentationError("no segments to write")
    length = segments[0].target_len
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(STORE_COLUMNS + [f"v{i}" for i in range(length)])
        for s in segments:
            w.writerow([s.subject_id, s.session_id, s.strategy.value, s.start, s.end,
                        s.target_len, repr(float(s.fs))] + [repr(float(v)) for v in s.values])


def read_segment_store(path: str | os.PathLike) -> list[Segment]:
    with open(path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(rows, None)
        if header is None or header[: len(STORE_COLUMNS)] != STORE_COLUMNS:
            raise SegmentationError(f"{path}: not a segment store")
        out = []
        k = len(STORE_COLUMNS)
        for row in rows:
            values = np.array(row[k:], dtype=np.float64)
            if values.size != int(row[5]):
                raise SegmentationError(f"{path}: row length disagrees with target_len")
            out.append(Segment(row[0], row[1], SegmentStrategy.parse(row[2]), int(row[3]),
                               int(row[4]), values, float(row[6])))
    return out
