from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tilesr.backends import ToyBackend, ToyModelSpec
from tilesr.geometry import Extent3
from tilesr.schedules import TimestepSchedule
from tilesr.volume import LatentVolume


@pytest.fixture
def schedule10() -> TimestepSchedule:
    return TimestepSchedule.linear(10)


@pytest.fixture
def toy_backend(schedule10):
    spec = ToyModelSpec(
        schedule=schedule10,
        condition_means={"subject": 0.7, "other": 0.2},
        default_mean=0.0,
    )
    return ToyBackend(spec)


def make_toy(schedule, means, default=0.0) -> ToyBackend:
    return ToyBackend(
        ToyModelSpec(schedule=schedule, condition_means=means, default_mean=default)
    )


@pytest.fixture
def small_volume() -> LatentVolume:
    rng = np.random.default_rng(42)
    return LatentVolume(rng.standard_normal((2, 6, 8, 3), dtype=np.float32))


def extent(t: int, h: int, w: int) -> Extent3:
    return Extent3(t, h, w)
