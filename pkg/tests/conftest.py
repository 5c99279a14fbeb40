import sys

import pytest

from wakeadapt.config import CampaignConfig


def small_config(**top) -> CampaignConfig:
    """A short campaign that runs in a few seconds."""
    base = CampaignConfig().to_dict()
    base["iterations"] = 3
    base["oracle"] = False
    base["dataset"]["n_ops"] = 6
    base["gp"]["n_restarts"] = 2
    base["optimizer"]["n_starts"] = 2
    base.update(top)
    return CampaignConfig.from_dict(base)


@pytest.fixture
def quick_config():
    return small_config()


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines):
        terminalreporter.write_line(lines[key])
