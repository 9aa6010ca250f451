"""Deterministic weak-grid VSC simulator.

Current-injection converter behind an LC filter on a high-impedance line,
with the synchronization PLL locked either to the local PCC voltage or to the
remote strong-grid voltage (timestamped angle over a delayed channel with
compensation), three-phase fault ride-through scenarios, and regression
metrics.
"""

from .frames import (
    DQ_PER_PEAK,
    DqVector,
    PerUnitBase,
    ThreePhaseSample,
    abc_to_dq,
    balanced_abc,
    dq_to_abc,
    instantaneous_power,
    nominal_base,
    rotate_frame,
    wrap_angle,
)
from .plant import (
    FaultWindow,
    NetworkParams,
    PlantDiverged,
    PlantState,
    derivatives,
    fault_is_active,
    step,
    strong_grid_voltage,
)
from .controller import (
    ControlParams,
    ControllerState,
    CurrentLoopState,
    PllState,
    RefFilterState,
    controller_tick,
    current_loop,
    current_references,
    pll_update,
)
from .synclink import (
    ChannelUnderrun,
    DelayChannel,
    SyncMode,
    TimestampedAngle,
    compensate_angle,
    select_sync_voltage,
)
from .scenario import (
    InsufficientTrace,
    Metrics,
    Scenario,
    SweepResult,
    Trace,
    TraceRow,
    classify_stability,
    compute_scr,
    impedance_sweep,
    run,
    settling_time,
    solve_operating_point,
)
from .presets import case_a, case_b, case_c, get_preset, preset_names
from .config import ConfigInvalid, load_config, scenario_from_dict, scenario_to_dict

__version__ = "0.1.0"
