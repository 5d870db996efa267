import functools

import numpy as np
import pytest

from vcconsensus.analysis import analyze
from vcconsensus.config import load_config
from vcconsensus.constraints import ring_velocity_set
from vcconsensus.graphs import ring_schedule
from vcconsensus.protocol import run
from vcconsensus.scenarios import RING_SEEDS, ring_scenario, random_scenario

RANDOM_SEEDS = tuple(range(20))


@functools.lru_cache(maxsize=None)
def ring_case(seed):
    cfg = load_config(ring_scenario(seed))
    traj = run(cfg)
    rep = analyze(traj, cfg.schedule.window_starts(cfg.horizon), cfg.rho_under)
    return cfg, traj, rep


@functools.lru_cache(maxsize=None)
def random_case(seed):
    cfg = load_config(random_scenario(seed))
    traj = run(cfg)
    rep = analyze(traj, cfg.schedule.window_starts(cfg.horizon), cfg.rho_under)
    return cfg, traj, rep


@pytest.fixture(scope="session")
def vset():
    return ring_velocity_set()


@pytest.fixture(scope="session")
def ring():
    return ring_schedule()


@pytest.fixture(scope="session")
def ring_runs():
    return [ring_case(s) for s in RING_SEEDS]


@pytest.fixture(scope="session")
def random_runs():
    return [random_case(s) for s in RANDOM_SEEDS]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, collected by test_acceptance.py
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
