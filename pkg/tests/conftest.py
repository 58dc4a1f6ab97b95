"""Shared test helpers."""

import numpy as np
import pytest

from hbproxy.cases import tc_tiny
from hbproxy.driver import RunSpec, run_case


def run_tiny(**kwargs):
    """tc-tiny run with overridable RunSpec fields (8 iterations by default)."""
    kwargs.setdefault("case", tc_tiny())
    kwargs.setdefault("ranks", 1)
    kwargs.setdefault("iterations", 8)
    return run_case(RunSpec(**kwargs))


def assert_fields_equal(a, b):
    assert sorted(a.fields) == sorted(b.fields)
    for block in a.fields:
        assert np.array_equal(a.fields[block], b.fields[block]), f"block {block}"


@pytest.fixture(scope="session")
def tiny_baseline():
    """Single-rank single-thread tc-tiny reference run (8 iterations)."""
    return run_tiny()


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance criteria verdicts after capture has ended."""
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
