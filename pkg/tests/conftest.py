import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from pose_dmp import quat

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def unit_quaternions(draw):
    """Unit quaternions from non-degenerate 4-vectors."""
    v = draw(st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4)
             .filter(lambda x: np.linalg.norm(x) > 0.1))
    return quat.normalize(np.array(v))


def vectors(bound=3.0):
    return st.lists(st.floats(-bound, bound, allow_nan=False), min_size=3, max_size=3).map(np.array)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


@pytest.fixture
def record():
    """Record one PASS/FAIL line for an acceptance criterion."""
    def _record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
