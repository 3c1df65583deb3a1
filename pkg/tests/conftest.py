from importlib import resources

import pytest


@pytest.fixture(scope="session")
def data_dir():
    return resources.files("civitas") / "data"


@pytest.fixture(scope="session")
def twin_network_text(data_dir):
    return (data_dir / "twin.network").read_text()


@pytest.fixture(scope="session")
def twin_demand_text(data_dir):
    return (data_dir / "twin.demand").read_text()


@pytest.fixture(scope="session")
def twin_ctg_text(data_dir):
    return (data_dir / "twin.ctg").read_text()


@pytest.fixture(scope="session")
def city_registry_text(data_dir):
    return (data_dir / "city.registry").read_text()
