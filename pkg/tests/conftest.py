import numpy as np
import pytest
from hypothesis import settings

from wolf.core_math import GaussianBelief, RngStream

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_spd(rng: np.random.Generator, n: int, floor: float = 0.1) -> np.ndarray:
    a = rng.standard_normal((n, n))
    return a @ a.T + floor * np.eye(n)


def random_belief(rng: np.random.Generator, m: int) -> GaussianBelief:
    return GaussianBelief(rng.standard_normal(m), random_spd(rng, m))


@pytest.fixture
def nprng():
    return np.random.default_rng(1234)


@pytest.fixture
def stream():
    return RngStream(7)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion; lines are echoed after the run."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
