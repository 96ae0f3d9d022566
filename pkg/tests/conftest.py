from __future__ import annotations

import pytest

from hardwall import tail_grid as tg
from hardwall.harness.config import default_cache_dir

ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def cache_dir():
    return default_cache_dir()


@pytest.fixture(scope="session")
def table(cache_dir):
    """Full-depth table (built once and cached on disk)."""
    tab, _ = tg.load_or_build(tg.N_REF, 0.01, cache_dir)
    return tab


@pytest.fixture(scope="session")
def small_table():
    return tg.build_tail_table(32)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
