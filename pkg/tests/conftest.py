import os

import numpy as np
import pytest

from eulerq._accel import HAVE_NUMBA

BACKENDS = ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_report_header(config):
    return f"eulerq backends: {BACKENDS}; EULERQ_BACKEND={os.environ.get('EULERQ_BACKEND', '')!r}"


# One line per acceptance criterion, echoed at the end of the run.
ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    def log(number, title, passed, detail, soft=False):
        tag = "PASS" if passed else ("SOFT-FAIL" if soft else "FAIL")
        line = f"criterion {number:>2} [{tag}] {title}: {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed

    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
