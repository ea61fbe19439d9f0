import numpy as np
import pytest

_criteria_key = pytest.StashKey[dict]()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion(request):
    """``criterion(n, passed, detail)`` prints a PASS/FAIL line (again in the
    end-of-run summary) and asserts ``passed``."""
    lines = request.config.stash.setdefault(_criteria_key, {})

    def record(n, passed, detail):
        lines[n] = f"CRITERION {n} {'PASS' if passed else 'FAIL'}: {detail}"
        print("\n" + lines[n])
        assert passed, detail

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_criteria_key, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
