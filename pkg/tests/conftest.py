import pytest
from hypothesis import HealthCheck, settings

from mixedroute.costs import CostModel
from mixedroute.network import braess_fixture, enumerate_routes, grid_network

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def braess():
    net, ods, table = braess_fixture()
    rs = enumerate_routes(net, ods, 3)
    return net, ods, rs, CostModel(net)


@pytest.fixture(scope="session")
def grid():
    net, ods = grid_network(seed=2)
    return net, ods, enumerate_routes(net, ods, 3), CostModel(net)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
