import sys
from pathlib import Path

import numpy as np
import pytest

from edustate import dataio, synth
from edustate.domain import FacialStream

FIXTURE_DIR = Path(__file__).parent / "data" / "fixture-2user"
SCRIPTS_DIR = Path(__file__).parent.parent / "scripts"


def make_stream(seconds=2.0, rate=30.0, width=51, segment_id="seg", pattern="sine"):
    """Deterministic test stream with values safely inside [0, 1]."""
    n = int(round(seconds * rate)) + 1
    t = np.arange(n) / rate
    c = np.arange(width)
    if pattern == "sine":
        vals = 0.5 + 0.3 * np.sin(0.7 * t[:, None] + 0.3 * c[None, :])
    elif pattern == "constant":
        vals = np.full((n, width), 0.3)
    else:
        raise ValueError(pattern)
    return FacialStream(segment_id, t, vals)


@pytest.fixture(scope="session")
def fixture_dataset():
    return dataio.load_dataset(FIXTURE_DIR)


@pytest.fixture(scope="session")
def small_synth():
    """4 users x 3 lectures with 1-minute streams; used across harness tests."""
    config = synth.SynthConfig(
        n_users=4, n_lectures=3, signal_strength=2.0, stream_minutes=1.0, seed=17,
    )
    return synth.generate(config)


@pytest.fixture(scope="session")
def small_synth_nostreams():
    config = synth.SynthConfig(n_users=6, n_lectures=4, generate_streams=False, seed=23)
    return synth.generate(config)
