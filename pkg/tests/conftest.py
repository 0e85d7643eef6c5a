import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from packrl.config import Config
from packrl.scenario import Timetable

settings.register_profile("default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("quick", deadline=None, max_examples=10, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def config() -> Config:
    return Config()


def manual_timetable(products=(), boxes=(), episode_length=60.0, warmup=0.0) -> Timetable:
    """Explicit detection times: ``products`` as (time, lane), ``boxes`` as times."""
    return Timetable(tuple(sorted(products)), episode_length, warmup, tuple(boxes))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
