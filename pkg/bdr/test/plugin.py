import zlib

import pytest

from bdr.util.rng import RandomStreams

# runs used by monte carlo tests unless --mc-runs says otherwise
DEFAULT_MC_RUNS = 1000


def pytest_addoption(parser):
    parser.addoption(
        "--monte-carlo",
        action="store_true",
        help="Run the (slow) monte carlo acceptance studies",
    )
    parser.addoption(
        "--mc-runs",
        type=int,
        default=DEFAULT_MC_RUNS,
        help="Number of simulation runs in monte carlo studies",
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "monte_carlo: slow simulation study")


def pytest_collection_modifyitems(config, items):
    if config.getoption("monte_carlo"):
        return
    skip = pytest.mark.skip(reason="monte carlo study (use --monte-carlo)")
    for item in items:
        if item.get_closest_marker("monte_carlo"):
            item.add_marker(skip)


@pytest.fixture
def streams(request) -> RandomStreams:
    # stable per test, independent of collection order
    return RandomStreams(zlib.crc32(request.node.nodeid.encode("utf-8")))


@pytest.fixture
def rng(streams):
    return streams.generator(0)


@pytest.fixture(scope="session")
def mc_runs(request) -> int:
    runs = request.config.getoption("mc_runs")
    if runs < 1:
        raise ValueError(f"--mc-runs must be >= 1, got {runs}")
    return runs
