import numpy as np
import pytest

from nsd_ensemble import fem
from nsd_ensemble.mesh import build_coupled_rect_mesh


@pytest.fixture(scope="session")
def rect2():
    m = build_coupled_rect_mesh(2)
    return m, fem.build_spaces(m)


@pytest.fixture(scope="session")
def rect4():
    m = build_coupled_rect_mesh(4)
    return m, fem.build_spaces(m)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary ---------------------------------------------------------------
# Each acceptance test records one line before asserting; the lines are printed
# together at the end of the session, whatever the outcome.

_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    def report(number, ok, detail):
        _ACCEPTANCE[number] = (bool(ok), detail)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
