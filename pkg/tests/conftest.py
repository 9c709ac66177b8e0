import numpy as np
import pytest

from mplcgrad.linalg import haar_unitary, make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


def haar_pair(n, seed):
    rng = make_rng(seed)
    return haar_unitary(n, rng), haar_unitary(n, rng)


def permutation_matrix(perm):
    n = len(perm)
    m = np.zeros((n, n), dtype=complex)
    m[np.arange(n), perm] = 1.0
    return m


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
