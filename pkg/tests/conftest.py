from pathlib import Path

import pytest

from wmcal import cli
from wmcal.market import Market, MarketConfig, RateCurve, ibex_surface

ROOT = Path(__file__).resolve().parents[1]
REFERENCE_CONFIG = ROOT / "configs" / "ibex_cliquet.json"

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def ibex_market():
    cfg = cli.load_config(REFERENCE_CONFIG)
    return cfg.market


@pytest.fixture(scope="session")
def flat_market():
    return Market(MarketConfig(100.0), RateCurve(0.0, 0.0), ibex_surface())


@pytest.fixture(scope="session")
def reference_config():
    return cli.load_config(REFERENCE_CONFIG)


@pytest.fixture(scope="session")
def reference_report(reference_config):
    return cli.run(reference_config)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
