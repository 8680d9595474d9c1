import math
import sys

import numpy as np
import pytest

from badcavity.model import SystemParams, build_effective_model


@pytest.fixture
def fig3_params():
    return SystemParams.from_rates(16.5, 10.0, theta=-math.pi / 2)


@pytest.fixture
def fig3_model(fig3_params):
    return build_effective_model(fig3_params)


def random_density(rng, dim=4, rank=None):
    rank = rank or dim
    a = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
