"""Shared fixtures: synthetic tracks and default vehicle parameters."""

import numpy as np
import pytest

from minlap import synthetic
from minlap import track_model as tm


@pytest.fixture(scope="session")
def circle_track_100():
    return tm.build_track(synthetic.circle_track(radius=100.0, n_points=36), 5.0)


@pytest.fixture(scope="session")
def straight_track_1000():
    return tm.build_track(synthetic.straight_track(length=1000.0), 5.0)


@pytest.fixture(scope="session")
def benchmark_track_5m():
    return tm.build_track(synthetic.benchmark_track(), 5.0)
