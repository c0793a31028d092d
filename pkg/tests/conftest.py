import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS: dict[int, str] = {}
_START = time.perf_counter()
SUITE_BUDGET_S = 120.0


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail}"
        _RESULTS[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for number in sorted(_RESULTS):
        tr.write_line(_RESULTS[number])
    elapsed = time.perf_counter() - _START
    verdict = "PASS" if elapsed < SUITE_BUDGET_S else "FAIL"
    tr.write_line(f"[{verdict}]  7b. full suite runtime: {elapsed:.1f} s (budget {SUITE_BUDGET_S:.0f} s)")
