import json
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def mono_oracle():
    return json.loads((DATA / "mono_posterior_oracle.json").read_text())


@pytest.fixture(scope="session")
def combo_oracle():
    return json.loads((DATA / "combo_oracle.json").read_text())


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
