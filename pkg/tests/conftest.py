import numpy as np
import pytest
from hypothesis import settings

from warmpool.trace import SyntheticTraceSpec, generate_trace

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

DAY = 2880


@pytest.fixture(scope="session")
def diurnal_trace():
    """Eight days of 30 s counts; trough rate 1, peak rate 20."""
    spec = SyntheticTraceSpec(pattern="diurnal", base_rate=1, peak_rate=20, horizon_intervals=8 * DAY, noise_seed=7)
    return generate_trace(spec)


@pytest.fixture(scope="session")
def sporadic_trace():
    spec = SyntheticTraceSpec(
        pattern="sporadic_spikes", base_rate=1, peak_rate=30, period_intervals=120, horizon_intervals=8 * DAY, noise_seed=1
    )
    return generate_trace(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
