import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vemschwarz import decomposition as dc
from vemschwarz import mesh as msh
from vemschwarz import pu, vem

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Collects ``PASS/FAIL`` lines that are echoed in the terminal summary."""
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tri16():
    return msh.build_triangular(16)


@pytest.fixture(scope="session")
def tri16_setup(tri16):
    """16x16 triangles, 4x4 squares, harmonic PU."""
    S = vem.vem_space(tri16, 1)
    P = dc.partition_structured(tri16, 4)
    sk = dc.extract_skeleton(P)
    return tri16, S, P, sk, pu.build_pu(S, sk)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
