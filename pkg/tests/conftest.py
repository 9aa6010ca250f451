"""Shared fixtures.

Full closed-loop runs cost about a second each, so the case studies and the
line-reactance sweep are run once per session and shared between the unit
tests and the acceptance module.
"""

from dataclasses import replace

import numpy as np
import pytest

from weakgrid.presets import case_a, case_b, case_c
from weakgrid.scenario import impedance_sweep, run
from weakgrid.synclink import SyncMode

SWEEP_X_VALUES = list(np.linspace(0.13, 1.0, 10))


@pytest.fixture(scope="session")
def case_a_runs():
    return {
        mode.value: run(replace(case_a(), sync_mode=mode))
        for mode in (SyncMode.PCC, SyncMode.STRONG_GRID)
    }


@pytest.fixture(scope="session")
def case_b_runs():
    return {
        mode.value: run(replace(case_b(), sync_mode=mode))
        for mode in (SyncMode.PCC, SyncMode.STRONG_GRID)
    }


@pytest.fixture(scope="session")
def case_c_run():
    return run(case_c())


@pytest.fixture(scope="session")
def case_b_sg_nodelay_run():
    return run(replace(case_b(), sync_mode=SyncMode.STRONG_GRID, label="case_b_nodelay"))


@pytest.fixture(scope="session")
def sweep_result():
    return impedance_sweep(case_b(), SWEEP_X_VALUES)
