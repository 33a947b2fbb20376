import numpy as np
import pytest

from reluverify import kernels
from reluverify.model import InputRegion, Network


@pytest.fixture
def hand_net():
    """f(x) = relu(x1 + x2) - relu(x1 - x2)."""
    return Network([[[1.0, 1.0], [1.0, -1.0]], [[1.0, -1.0]]], [[0.0, 0.0], [0.0]])


@pytest.fixture
def unit_box():
    return InputRegion(np.zeros(2), 1.0)


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for res in sorted(RESULTS, key=lambda r: r.number):
            terminalreporter.write_line(res.line())
