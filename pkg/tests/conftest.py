from datetime import timedelta

import pytest

from districtems.core import EvTwinConfig, FleetConfig, HeatTwinConfig, save_scenario
from districtems.harness.scenarios import RUN_START, SIGNALS, district
from districtems.twin import synthetic_signals, write_signals_csv

WARMUP = 3


@pytest.fixture(scope="session")
def small_scenarios(tmp_path_factory):
    """Short-warm-up scenarios next to their own signal file."""
    root = tmp_path_factory.mktemp("scenarios")
    sig = synthetic_signals(RUN_START - timedelta(days=WARMUP), WARMUP + 3, seed=4, **SIGNALS["signals_tou.csv"])
    write_signals_csv(sig, root / "signals.csv")
    specs = {
        "zero": district("zero", heat=None, ev=EvTwinConfig(fleet=FleetConfig(n_vehicles=0)), warmup_days=WARMUP),
        "heat": district("heat", heat=HeatTwinConfig(), ev=None, warmup_days=WARMUP),
        "both": district("both", heat=HeatTwinConfig(), ev=EvTwinConfig(delay_enabled=False), p_lim={"elec": 70.0},
                         warmup_days=WARMUP),
    }
    paths = {}
    for name, spec in specs.items():
        paths[name] = root / f"{name}.json"
        save_scenario(spec, paths[name])
    return paths


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
