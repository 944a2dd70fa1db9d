import pytest

from app.config.config import get_settings
from app.lab.primes import PrimePartition
from app.providers.partition_provider import get_partition

SMALL_LIMIT = 20_000


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running Monte-Carlo or quadrature checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def isolated_cache(tmp_path_factory, monkeypatch):
    """Point the sieve cache at a throwaway directory"""
    monkeypatch.setenv("ZXLB_CACHE_DIR", str(tmp_path_factory.getbasetemp() / "cache"))
    get_settings.cache_clear()
    get_partition.cache_clear()
    yield
    get_settings.cache_clear()
    get_partition.cache_clear()


@pytest.fixture(scope="session")
def partition() -> PrimePartition:
    """Blocks 0, 1 and 2 complete; block 3 partial"""
    return PrimePartition.build(SMALL_LIMIT)
