import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ecgfusion.ingest import synthetic_cohort
from ecgfusion.scalogram import CwtSupportWarning
from ecgfusion.segment import segment_records, segments_to_arrays

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def cohort_arrays():
    """4 subjects x 12 PT segments of 128 samples, with 16x16 scalograms."""
    from ecgfusion.estimator import EcgIdentifier

    records = synthetic_cohort(4, duration_s=20, fs=360, noise_std_mv=0.01, seed=3)
    segments, _ = segment_records(records, "pt", 128, max_instances=12)
    X, y, sessions = segments_to_arrays(segments)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CwtSupportWarning)
        S = EcgIdentifier(img_size=16, f_max=60.0).compute_scalograms(X)
    return X, y, S


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
