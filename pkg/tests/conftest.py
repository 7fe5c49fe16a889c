import numpy as np
import pytest

from promptseg.config import toy_config
from promptseg.model import SegModel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_cfg():
    return toy_config()


@pytest.fixture
def toy_model(toy_cfg):
    return SegModel(toy_cfg, seed=0)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdict lines, which are otherwise captured."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", None) == "call":
                lines += [ln for ln in rep.capstdout.splitlines() if ln.startswith("ACCEPT ")]
    if lines:
        terminalreporter.section("acceptance")
        for ln in lines:
            terminalreporter.write_line(ln)
