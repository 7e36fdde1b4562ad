import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy.stats import unitary_group

from mixgate import qcore

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_unitary(seed: int, dim: int = 4) -> np.ndarray:
    return unitary_group.rvs(dim, random_state=np.random.default_rng(seed))


def random_cptp(seed: int, rank: int = 3) -> np.ndarray:
    """PTM of a random channel with ``rank`` Kraus operators cut from a random isometry."""
    iso = random_unitary(seed, 4 * rank)[:, :4]
    return qcore.ptm_from_kraus(iso.reshape(rank, 4, 4))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
