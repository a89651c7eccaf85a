from pathlib import Path

import numpy as np
import pytest

from cpa_gnn.graphs import load_tu_dataset

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def mutag():
    return load_tu_dataset(DATA / "MUTAG", "MUTAG")


@pytest.fixture(scope="session")
def toy():
    return load_tu_dataset(DATA / "TOY", "TOY")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
