import numpy as np
import pytest

from dynapolk.kernel import KernelSpec
from dynapolk.rkhs import DictionaryFunction


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_function(rng, kernel=None, M=5, p=2, C=1, scale=1.0):
    kernel = kernel or KernelSpec.gaussian(0.7)
    D = rng.uniform(-2, 2, size=(M, p))
    W = rng.normal(scale=scale, size=(M, C))
    return DictionaryFunction(kernel, D, W)


_CRITERIA = {}


def record(number, name, ok, detail=""):
    """Register one acceptance result for the end-of-session summary."""
    _CRITERIA[number] = (name, bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        name, ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {name}: {detail}")
