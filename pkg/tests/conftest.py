import numpy as np
import pytest

ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} :: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
