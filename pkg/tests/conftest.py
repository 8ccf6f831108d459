import numpy as np
import pytest

from emsde import backends

# acceptance-criterion results collected across the session, printed in the
# terminal summary so every criterion gets one visible pass/fail line
ACCEPTANCE_RESULTS = []


def record_criterion(name: str, passed: bool, detail: str = ""):
    ACCEPTANCE_RESULTS.append((name, passed, detail))
    assert passed, f"{name}: {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        line = f"{status}  {name}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


@pytest.fixture(params=backends.available_backends())
def backend_name(request):
    """Run a test once per available kernel backend."""
    previous = backends.active_backend_name()
    backends.set_active_backend(request.param)
    yield request.param
    backends.set_active_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
