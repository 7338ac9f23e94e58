import numpy as np
import pytest

from fmatlayers.synthetic import SceneConfig, generate_scene


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def exact_scene():
    return generate_scene(SceneConfig(seed=7))


@pytest.fixture(scope="session")
def noisy_scene():
    return generate_scene(SceneConfig(seed=11, noise_sigma=0.5, outlier_fraction=0.3, n_points=100))


# acceptance verdicts, filled by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
