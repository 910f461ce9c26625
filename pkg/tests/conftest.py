import pytest

from resetreplay.config import RunConfig
from resetreplay.tasks import make_task


@pytest.fixture
def mod_add():
    return make_task("mod_add")


@pytest.fixture
def tiny_cfg():
    """A run small enough for unit tests (a couple of seconds)."""
    return RunConfig.from_dict({
        "dataset": {"size": 64, "seed": 0}, "eval_size": 32, "batch_size": 8, "N": 3,
        "pretrain": {"steps": 20}, "seeds": [1, 2],
    })


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
