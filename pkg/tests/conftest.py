import pytest

from aggdiff.mesh import build_grid
from aggdiff.specs import InternalEnergySpec, KernelSpec, ModelSpec, PotentialSpec


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the long acceptance runs")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance test, enabled by --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def line_grid():
    return build_grid(1, 64, (-4.0, 4.0))


@pytest.fixture
def ring_grid():
    return build_grid(1, 64, (0.0, 1.0), "periodic")


@pytest.fixture
def square_grid():
    return build_grid(2, 16, (-2.0, 2.0))


@pytest.fixture
def heat_model():
    return ModelSpec(internal=InternalEnergySpec.linear())


@pytest.fixture
def porous_model():
    return ModelSpec(internal=InternalEnergySpec.power(2.0))


@pytest.fixture
def aggregation_model():
    return ModelSpec(
        internal=InternalEnergySpec.power(2.0),
        potential=PotentialSpec.power(2.0, 0.1),
        kernel=KernelSpec.gaussian(1.0, 0.5),
    )
