import sys
from pathlib import Path

import pytest

from personaprop.graph import BipartiteGraph

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"

PATH_PAIRS = [(0, 0), (1, 0), (1, 1), (2, 1)]
SHARED_PAIRS = [(0, 0), (1, 0)]


@pytest.fixture
def path_graph():
    return BipartiteGraph.from_pairs(3, 2, PATH_PAIRS)


@pytest.fixture
def shared_graph():
    return BipartiteGraph.from_pairs(2, 1, SHARED_PAIRS)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one acceptance line; returns ``ok`` so tests can assert on it."""

    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
