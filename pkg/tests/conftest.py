import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from beamsched.config import DESK

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def desk():
    return DESK


@pytest.fixture
def small():
    """Three beams, a handful of users and a short window: fast end-to-end runs."""
    return DESK.replace(num_beams=3, users_per_beam=4, window_slots=6, qos_slots_range=(0, 4))


def random_channel(rng: np.random.Generator, M: int, K: int, scale: float = 1e-5) -> np.ndarray:
    return scale * (rng.normal(size=(M, K)) + 1j * rng.normal(size=(M, K)))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[0][1:])):
        terminalreporter.write_line(line)
