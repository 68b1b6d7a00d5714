"""Shared fixtures.

The synthetic pool, the simulated meeting, and its oracle separation are
session scoped because they dominate test runtime; consumers treat them as
read-only.
"""

import numpy as np
import pytest

import meetpipe as mp


@pytest.fixture(scope="session")
def pool():
    return mp.build_synthetic_pool(3, 12, seed=11)


@pytest.fixture(scope="session")
def meeting(pool):
    spec = mp.MeetingSpec(
        num_speakers=2,
        target_overlap=0.3,
        session_length=12.0,
        silence_mode="short",
        seed=5,
    )
    return mp.simulate_meeting(pool, spec)


@pytest.fixture(scope="session")
def separated(meeting):
    mixture, truth = meeting
    estimator = mp.OracleMaskEstimator.from_ground_truth(truth, num_streams=2, seed=5)
    return mp.separate(mixture, estimator)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
