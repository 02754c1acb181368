"""ECG biometric identification from heartbeat waveforms and their CWT scalograms."""

from .estimator import EcgIdentifier
from .fiducial import FiducialMarks, delineate, detect_r_peaks
from .fusion import attention_fuse, fuse_features, fuse_scores, sweep_lambda
from .ingest import EcgRecord, SyntheticEcgSpec, read_wfdb_record, synth_ecg, synthetic_cohort
from .preprocess import SavGolConfig, SavitzkyGolaySmoother, savgol_filter
from .repro import __version__
from .scalogram import CwtPlan, ScalogramTransformer, cwt, render_scalogram, scale_for_frequency
from .segment import SegmentStrategy, extract_segments, segment_records

__all__ = [
    "CwtPlan", "EcgIdentifier", "EcgRecord", "FiducialMarks", "SavGolConfig", "SavitzkyGolaySmoother",
    "ScalogramTransformer", "SegmentStrategy", "SyntheticEcgSpec", "__version__", "attention_fuse",
    "cwt", "delineate", "detect_r_peaks", "extract_segments", "fuse_features", "fuse_scores",
    "read_wfdb_record", "render_scalogram", "savgol_filter", "scale_for_frequency", "segment_records",
    "sweep_lambda", "synth_ecg", "synthetic_cohort",
]
