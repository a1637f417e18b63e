import pytest

from sis.amalgam import BSpline, GeneratorVector, PolyDecay
from sis.measure import MeasureComponent, VecMeasure
from sis.sampling_op import SamplingModel

# lines collected by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


@pytest.fixture
def hat():
    return BSpline(1)


@pytest.fixture
def phi_hat():
    return GeneratorVector([BSpline(1)])


@pytest.fixture
def delta0():
    return VecMeasure([MeasureComponent.dirac(0.0)])


@pytest.fixture
def baseline(phi_hat, delta0):
    return SamplingModel(phi_hat, delta0)


@pytest.fixture
def shifted_model(phi_hat):
    """Samples of the hat against delta_{1/4}: eta = 1/2, beta = 1."""
    return SamplingModel(phi_hat, VecMeasure([MeasureComponent.dirac(0.25)]))


@pytest.fixture
def poly2():
    return GeneratorVector([PolyDecay(2.0)])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
