import pytest

from gridflex import bundled
from gridflex.opf import solve_schedule


@pytest.fixture(scope="session")
def twobus_sc():
    return bundled.twobus()


@pytest.fixture(scope="session")
def swisslike12():
    return bundled.swisslike(horizon=12)


@pytest.fixture(scope="session")
def swisslike12_schedule(swisslike12):
    """Solved swisslike instance, shared by tests that only read the result."""
    return swisslike12, solve_schedule(swisslike12)


@pytest.fixture(scope="session")
def two_resource_sc():
    return bundled.two_resource()


@pytest.fixture(scope="session")
def lossless_sc():
    return bundled.lossless_curtailment()
