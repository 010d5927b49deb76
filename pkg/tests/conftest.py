import numpy as np
import pytest

from gtfm.series import data_path, load_frame, load_scenarios


@pytest.fixture(scope="session")
def demo_frame():
    return load_frame(data_path("demo_lgd.csv"), "LGD")


@pytest.fixture(scope="session")
def demo_scenarios():
    return load_scenarios(data_path("demo_scenarios.csv"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
