import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tollcast import load_fixture  # noqa: E402

ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture
def fx():
    return load_fixture


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {title}")
