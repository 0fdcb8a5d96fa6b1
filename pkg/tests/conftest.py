import os

import pytest

# keep test runs away from the user's constant cache
os.environ.setdefault("FBMSTAT_CACHE", "off")

ACCEPTANCE: list[tuple[int, bool, str]] = []


@pytest.fixture
def record():
    """Record one acceptance line: ``record(criterion, passed, detail)``."""

    def _record(criterion: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE.append((criterion, bool(passed), detail))
        print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")
        return bool(passed)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {crit:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
