"""Shipped scenario presets.

``case_a`` uses the small line impedance (both synchronization modes ride the
fault through), ``case_b`` the large one (PCC synchronization fails),
``case_c`` is the large impedance under strong-grid synchronization with the
worst-case communication delay and its compensation enabled.
"""

from __future__ import annotations

from .controller import ControlParams
from .frames import nominal_base
from .plant import FaultWindow, NetworkParams
from .scenario import Scenario
from .synclink import SyncMode

# nameplate bases: 11 kV strong-grid side, 3.3 kV converter side, 5 MVA, 50 Hz
BASE = nominal_base(f_nominal=50.0, v_base_sg=11e3, v_base_vsc=3.3e3, s_base=5e6)

LINE_SMALL = {"r_line": 0.01298, "x_line": 0.1298}
LINE_LARGE = {"r_line": 0.05193, "x_line": 0.5193}

WORST_CASE_DELAY = 0.01  # half a nominal cycle

_DEFAULT_FAULT = FaultWindow(t_start=1.0, duration_cycles=10.0, location=0.0)


def _scenario(label: str, line: dict, sync_mode: SyncMode, **kwargs) -> Scenario:
    return Scenario(
        base=BASE,
        network=NetworkParams(**line),
        control=ControlParams(),
        sync_mode=sync_mode,
        fault=_DEFAULT_FAULT,
        t_end=2.5,
        dt_plant=2e-6,
        label=label,
        **kwargs,
    )


def case_a(sync_mode: SyncMode = SyncMode.PCC) -> Scenario:
    return _scenario("case_a", LINE_SMALL, sync_mode)


def case_b(sync_mode: SyncMode = SyncMode.PCC) -> Scenario:
    return _scenario("case_b", LINE_LARGE, sync_mode)


def case_c(sync_mode: SyncMode = SyncMode.STRONG_GRID) -> Scenario:
    if sync_mode is not SyncMode.STRONG_GRID:
        raise ValueError("case_c models the delayed strong-grid link; pcc sync has no delay channel")
    return _scenario(
        "case_c",
        LINE_LARGE,
        SyncMode.STRONG_GRID,
        delay=WORST_CASE_DELAY,
        compensation_enabled=True,
    )


PRESET_BUILDERS = {
    "case_a": case_a,
    "case_b": case_b,
    "case_c": case_c,
}


def get_preset(name: str, sync_mode: SyncMode | None = None) -> Scenario:
    """Preset scenario by name, optionally overriding the synchronization mode."""
    try:
        builder = PRESET_BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESET_BUILDERS)}")
    if sync_mode is None:
        return builder()
    return builder(sync_mode=sync_mode)


def preset_names() -> list[str]:
    return sorted(PRESET_BUILDERS)
