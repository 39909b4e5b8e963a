import numpy as np
import pytest

from koopse.sysid import lift_blocks

# filled by the acceptance tests, printed at the end of the run
ACCEPTANCE_RESULTS = {}


def random_dataset(rng, p=50, rx=12, ru=2, ry=5, nstar=4):
    return lift_blocks(rng.standard_normal((rx, p)), rng.standard_normal((rx, p)), rng.standard_normal((ru, p)),
                       rng.standard_normal((ry, p)), rng.standard_normal((nstar, p)))


def rel_err(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for num in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[num])
