"""Shared fixtures and the end-of-run acceptance summary."""

from pathlib import Path

import pytest

from bolab.harness import run_file

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

_CRITERIA: list = []


@pytest.fixture
def criterion_line():
    """Record one pass/fail line for the acceptance section of the summary."""

    def record(line: str) -> None:
        _CRITERIA.append(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def standard_low_run(tmp_path_factory):
    """One cold run of the bundled standard config, shared across tests."""
    out = tmp_path_factory.mktemp("standard_low")
    report, artifacts = run_file(CONFIG_DIR / "standard_low.cfg",
                                 out_dir=out, jobs=1)
    return report, artifacts, out
