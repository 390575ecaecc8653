import numpy as np
import pytest

from ivett.core import ModelSpec, ObservedDataset
from ivett.sim import DgpSpec, generate, scenario_spec


@pytest.fixture(scope="session")
def binary_dgp():
    return DgpSpec.binary()


@pytest.fixture(scope="session")
def continuous_dgp():
    return DgpSpec.continuous()


@pytest.fixture(scope="session")
def spec_i():
    return scenario_spec("i", "binary")


@pytest.fixture(scope="session")
def data_5000(binary_dgp):
    return generate(binary_dgp, 5000, 11)


@pytest.fixture(scope="session")
def data_200k(binary_dgp):
    return generate(binary_dgp, 200_000, 5)


@pytest.fixture
def tiny():
    """Four records covering both arms and both instrument values."""
    return ObservedDataset(a=[0, 1, 0, 1], y=[1, 0, 0, 1], z=[1, 0, 1, 0],
                           c=[[0, 1], [1, 0], [1, 1], [0, 0]])


@pytest.fixture
def simple_spec():
    return ModelSpec(instrument_terms=["1"], propensity_terms=["1", "z"],
                     outcome_terms=["1", "z"])


def rng(seed=0):
    return np.random.default_rng(seed)


# acceptance verdicts, printed once more at the end of the session
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def verdict():
    def record(criterion, ok, detail=""):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        ACCEPTANCE[criterion] = line
        print("\n" + line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
