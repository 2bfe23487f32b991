import numpy as np
import pytest

from mam2 import numerics as nx
from mam2.numerics import Tensor


@pytest.fixture
def f64():
    with nx.precision("float64"):
        yield


def param(rng, *shape, scale=1.0):
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def fd_error(loss_fn, params, h=1e-5):
    """Worst norm-wise relative error over ``params``; zero-gradient tensors pass on round-off."""
    results = nx.check_gradients(loss_fn, params, h=h)
    bad = [r for r in results if not r.ok(1e-5)]
    return max((r.error for r in results if not r.vanishing), default=0.0), bad


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
