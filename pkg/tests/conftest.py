import time

import pytest

from facsa.cli import TABLE1_DISTS, TABLE1_ROWS, _threshold_row
from facsa.de import DEConfig

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def table1():
    """All computed Table I cells, keyed by (variant, boundary, dist)."""
    cfg = DEConfig()
    start = time.perf_counter()
    cells = {}
    for variant, boundary in TABLE1_ROWS:
        for dist in TABLE1_DISTS:
            row = _threshold_row(variant, boundary, dist, 5e-4, cfg)
            cells[(variant, boundary, dist)] = row["g_star"]
    return cells, time.perf_counter() - start
