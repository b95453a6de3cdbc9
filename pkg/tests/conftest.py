import functools

import numpy as np
import pytest

from zsbias.correction import correct_volume
from zsbias.synthetic import simulate

ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail=""):
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}"
    if detail:
        line += f" :: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@functools.lru_cache(maxsize=None)
def synthetic_run(seed, bias_strength=0.3, noise_sigma=0.01):
    """Default-config correction of a 64^3 phantom; cached per session."""
    case = simulate(bias_strength=bias_strength, noise_sigma=noise_sigma, seed=seed)
    return case, correct_volume(case.corrupted)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
