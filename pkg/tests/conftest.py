import numpy as np
import pytest

from graphcl.netcore.autodiff import get_default_dtype, set_default_dtype


@pytest.fixture(autouse=True)
def float64_default():
    """Tests run at 64-bit unless they opt out; training code may switch the global
    dtype, so it is restored afterwards."""
    prev = get_default_dtype()
    set_default_dtype(np.float64)
    yield
    set_default_dtype(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance reporting: one line per criterion, whatever the outcome

ACCEPTANCE = {}          # criterion number -> detail text, filled by the tests
_OUTCOMES = {}           # criterion number -> passed?


def _criterion(nodeid):
    name = nodeid.split("::")[-1]
    if "test_acceptance.py" in nodeid and name.startswith("test_criterion_"):
        return int(name.split("_")[2])
    return None


def pytest_runtest_logreport(report):
    n = _criterion(report.nodeid)
    if n is None:
        return
    if report.when == "call" or report.failed:
        _OUTCOMES[n] = _OUTCOMES.get(n, True) and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        status = "PASS" if _OUTCOMES[n] else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  {ACCEPTANCE.get(n, '(no detail recorded)')}")
