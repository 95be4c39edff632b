import numpy as np
import pytest

from locmix import measures as M
from locmix import models as Mo


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_measures(seed, count, n_range=(2, 6), **kw):
    rng = np.random.default_rng(seed)
    return [M.random_measure(rng, int(rng.integers(n_range[0], n_range[1] + 1)), **kw) for _ in range(count)]


def correlated_pair():
    return M.materialize({(1, 1): 1.0, (-1, -1): 1.0}, 2)


def k2(lam=1.0):
    return Mo.hardcore(Mo.Graph(2, ((0, 1),)), lam)


def ising3():
    J = np.array([[0.0, 0.12, -0.05], [0.12, 0.0, 0.08], [-0.05, 0.08, 0.0]])
    return J, np.array([0.1, -0.2, 0.3])


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
