import numpy as np
import pytest


def random_state(gen, dim):
    v = gen.normal(size=dim) + 1j * gen.normal(size=dim)
    return v / np.linalg.norm(v)


def random_unit(gen, n=None):
    x = gen.normal(size=(3,) if n is None else (n, 3))
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


HALF_INTEGERS = [0.5, 1, 1.5, 2, 2.5]


# acceptance criteria append "PASS ..." / "FAIL ..." lines here; they are
# echoed at the end of the run so they survive output capturing
ACCEPTANCE_LINES = []


def report(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES, key=lambda t: t[0]):
            terminalreporter.write_line(line)
