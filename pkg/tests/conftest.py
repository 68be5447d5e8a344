import sys

import pytest

from rarevent.synth import SynthConfig, simulate

SMALL = SynthConfig(n_individuals=12, n_horizons=12, seed_history_horizons=60,
                    roster_size_per_horizon=8, target_event_rate=0.08,
                    calibration_horizons=800, seed=7)


@pytest.fixture(scope="session")
def small_synth():
    return simulate(SMALL)


@pytest.fixture(scope="session")
def small_panel(small_synth):
    return small_synth.panel


@pytest.fixture(scope="session")
def fixture_synth():
    """The canonical acceptance fixture: default config, seed 42."""
    return simulate(SynthConfig(seed=42))


@pytest.fixture(scope="session")
def fixture_panel(fixture_synth):
    return fixture_synth.panel


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
