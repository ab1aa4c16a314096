import numpy as np
import pytest

from emgctl.bundle import TrainResult, train_bundle
from emgctl.classifier import TrainConfig
from emgctl.cues import build_cue_schedule
from emgctl.synth import SynthConfig, synth_generate

SMALL_CHANNELS = 16
SMALL_GRID = (4, 4)
SMALL_K = 8


def small_synth_config(seed: int = 5) -> SynthConfig:
    return SynthConfig(channels=SMALL_CHANNELS, grid_rows=SMALL_GRID[0],
                       grid_cols=SMALL_GRID[1], seed=seed)


def small_train_config(seed: int = 3, epochs: int = 40) -> TrainConfig:
    return TrainConfig(epochs=epochs, hidden=(64, 64), seed=seed)


@pytest.fixture(scope="session")
def small_session():
    """20-cue, 16-channel synthetic session shared by the unit tests."""
    schedule = build_cue_schedule(seed=11, reps_per_series=2, series=1)
    recording = synth_generate(small_synth_config(seed=5), schedule)
    return schedule, recording


@pytest.fixture(scope="session")
def small_result(small_session) -> TrainResult:
    schedule, recording = small_session
    return train_bundle(recording, schedule, small_train_config(), k=SMALL_K)


@pytest.fixture(scope="session")
def small_bundle(small_result):
    return small_result.bundle
