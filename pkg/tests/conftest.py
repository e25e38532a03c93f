import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# (number, title, passed, detail) for every acceptance criterion checked this session
ACCEPTANCE: list = []


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> None:
        line = (number, title, bool(passed), detail)
        ACCEPTANCE.append(line)
        print(f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} {detail}")
        assert passed, f"criterion {number} failed: {title} {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title} {detail}")
