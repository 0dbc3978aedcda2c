"""Session fixtures: seeded CLI pipelines shared by the CLI and acceptance tests."""
from __future__ import annotations

from pathlib import Path

import pytest

from pipeline import Pipeline, run_cli, run_pipeline


@pytest.fixture(scope="session")
def seeded_pipeline(tmp_path_factory) -> Pipeline:
    return run_pipeline(tmp_path_factory.mktemp("seeded"))


@pytest.fixture(scope="session")
def small_data(tmp_path_factory) -> Path:
    """A small synthetic cohort for quick CLI tests."""
    path = tmp_path_factory.mktemp("small") / "small.csv"
    assert run_cli("synth", "--set", "n_patients=120", "--set", "n_events=12", "--set", "n_windows=3",
                   "--set", "events_per_patient_mean=3", "--set", "positive_rates=0.2,0.3",
                   "--out", path) == 0
    return path


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
