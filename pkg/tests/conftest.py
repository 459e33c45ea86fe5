import numpy as np
import pytest

from rsqlearn.envs import GridWorldConfig, MatchingConfig, TabularMDP, grid_build, matching_build


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid():
    return grid_build(GridWorldConfig(noise_sigma=0.0))


@pytest.fixture(scope="session")
def noisy_grid():
    return grid_build(GridWorldConfig(noise_sigma=2.0))


@pytest.fixture(scope="session")
def matching():
    return matching_build(MatchingConfig(noise_sigma=0.0))


@pytest.fixture(scope="session")
def noisy_matching():
    return matching_build(MatchingConfig(noise_sigma=2.0))


def two_state_mdp(sigma=1.0):
    P = np.array(
        [
            [[0.7, 0.3], [0.2, 0.8]],
            [[0.4, 0.6], [0.9, 0.1]],
        ]
    )
    r = np.array([[1.0, 0.5], [0.0, 2.0]])
    return TabularMDP(P, r, sigma=sigma)


@pytest.fixture
def mdp2():
    return two_state_mdp()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def record():
    def _record(n, ok, detail):
        ACCEPTANCE_LINES.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return _record
