import numpy as np
import pytest

from sethar.dataio import (
    ActivitySpace, SyntheticConfig, fit_normalizer, segment,
    synth_sparse_stream,
)


def separable_synth_config(duration=400.0, dwell=25.0, gap=0.5, rate=20.0):
    """Three activities with disjoint channel means and mild noise: a
    nearest-mean classifier on single readings is already accurate, so a
    set model should fit the windows nearly perfectly."""
    return SyntheticConfig(
        activities=ActivitySpace(("sit", "walk", "jog")),
        channel_means=np.array([[0.1, 0.1, 0.1],
                                [0.5, 0.9, 0.3],
                                [0.9, 0.2, 0.8]]),
        noise_scales=np.array([0.02, 0.03, 0.03]),
        mean_gap_s=gap,
        mean_dwell_s=dwell,
        duration_s=duration,
        rate_hz=rate,
    )


def make_dataset(cfg, seed, window_len=2.0):
    stream = synth_sparse_stream(cfg, seed=seed)
    segs, _ = segment(stream, window_len=window_len)
    return segs


@pytest.fixture(scope="session")
def separable_segments():
    cfg = separable_synth_config()
    return make_dataset(cfg, seed=1234), cfg.activities


@pytest.fixture(scope="session")
def separable_norm(separable_segments):
    segs, _ = separable_segments
    return fit_normalizer(segs)
