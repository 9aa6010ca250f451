"""Continuous-time electrical network: average-model VSC terminal, LC filter,
transformer + line series impedance to a rigid strong-grid source, and a
switchable three-phase fault, integrated with a fixed-step classical RK4.

Circuit, per phase (all quantities per-unit, reactances at nominal frequency):

    u_vsc --[L_f = x_filter_l/w_N, r_filter_parasitic]-- PCC node (C_f)
    PCC --[X_T]--(line start)--[r_line, x_line]-- strong-grid bus (ideal)

The fault is a shunt ``r_fault`` to ground on the line, ``location`` being the
fraction of the line impedance between the transformer and the fault point.
While the fault is active the line splits into two branches with independent
currents; the grid-side branch current is an extra internal state that is
created at fault inception (equal to the pre-fault line current) and folded
back into the single line current at clearance by a flux-conserving merge.
A fault at ``location = 1`` sits on the rigid bus and has no effect on the
converter side.

The strong-grid bus holds an ideal balanced 1.0 pu-peak set at exactly
nominal frequency; the resistive load on that bus does not influence the
converter dynamics and enters only the power audit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frames import PerUnitBase, ThreePhaseSample, balanced_abc

# any state beyond this magnitude (or non-finite) marks the run as diverged
DIVERGENCE_LIMIT = 100.0

# hard cap on the RK4 step; the fastest regular eigenmode scales with
# w_N * |x_filter_c| and needs dt well below 1/(w_N*|x_c|) for accuracy
DT_MAX = 5e-6


class PlantDiverged(RuntimeError):
    """A state left the trusted region (|x| > 100 pu or non-finite)."""


@dataclass(frozen=True)
class NetworkParams:
    """Per-unit impedances of the network (capacitive reactance is negative)."""

    x_filter_l: float = 1.442
    x_filter_c: float = -182.7
    x_transformer: float = 0.05
    r_line: float = 0.01298
    x_line: float = 0.1298
    r_load: float = 0.25
    r_fault: float = 0.01
    r_filter_parasitic: float = 0.005

    def __post_init__(self):
        if self.x_filter_l <= 0.0:
            raise ValueError("x_filter_l must be positive")
        if self.x_filter_c >= 0.0:
            raise ValueError("x_filter_c must be negative (capacitive)")
        if self.x_transformer < 0.0:
            raise ValueError("x_transformer must be non-negative")
        if self.r_line < 0.0:
            raise ValueError("r_line must be non-negative")
        if self.x_line <= 0.0:
            raise ValueError("x_line must be positive")
        if self.r_load <= 0.0:
            raise ValueError("r_load must be positive")
        if self.r_fault <= 0.0:
            raise ValueError("r_fault must be positive")
        if self.r_filter_parasitic < 0.0:
            raise ValueError("r_filter_parasitic must be non-negative")


@dataclass(frozen=True)
class PlantState:
    """The nine persistent continuous states (three per three-phase group)."""

    i_filter: ThreePhaseSample
    v_pcc: ThreePhaseSample
    i_line: ThreePhaseSample

    @staticmethod
    def zero() -> "PlantState":
        z = ThreePhaseSample(0.0, 0.0, 0.0)
        return PlantState(z, z, z)

    def as_array(self) -> np.ndarray:
        return np.array([*self.i_filter, *self.v_pcc, *self.i_line], dtype=float)

    @staticmethod
    def from_array(x) -> "PlantState":
        return PlantState(
            ThreePhaseSample(x[0], x[1], x[2]),
            ThreePhaseSample(x[3], x[4], x[5]),
            ThreePhaseSample(x[6], x[7], x[8]),
        )


@dataclass(frozen=True)
class FaultWindow:
    """Three-phase line-to-ground fault timing and position."""

    t_start: float = 1.0
    duration_cycles: float = 10.0
    location: float = 0.0

    def __post_init__(self):
        if self.t_start < 0.0:
            raise ValueError("fault t_start must be non-negative")
        if self.duration_cycles <= 0.0:
            raise ValueError("fault duration_cycles must be positive")
        if not 0.0 <= self.location <= 1.0:
            raise ValueError("fault location must lie in [0, 1]")

    def t_clear(self, base: PerUnitBase) -> float:
        return self.t_start + self.duration_cycles / base.f_nominal


def fault_is_active(t: float, w: FaultWindow, base: PerUnitBase) -> bool:
    """Half-open activity window [t_start, t_start + cycles/f_nominal)."""
    return w.t_start <= t < w.t_clear(base)


def strong_grid_voltage(t: float, base: PerUnitBase) -> ThreePhaseSample:
    """Ideal balanced 1.0 pu-peak set at nominal frequency, phase a peaking at t=0."""
    return balanced_abc(1.0, base.omega_nominal * t)


def derivatives(
    state: PlantState,
    u_vsc: ThreePhaseSample,
    v_sg: ThreePhaseSample,
    params: NetworkParams,
    base: PerUnitBase,
    fault_active: bool = False,
    fault_location: float = 0.0,
    i_grid_side: ThreePhaseSample | None = None,
) -> tuple[PlantState, ThreePhaseSample | None]:
    """Time derivatives of the plant states in per-unit per second.

    With the fault active, ``state.i_line`` is the converter-side branch
    current and ``i_grid_side`` the grid-side one (defaults to ``state.i_line``,
    the inception condition).  Returns the PlantState-shaped derivative and,
    when the fault is active, the grid-side branch derivative.
    """
    w = base.omega_nominal
    inv_lf = w / params.x_filter_l
    inv_cf = w * abs(params.x_filter_c)

    i_f, v, i_l = state.i_filter, state.v_pcc, state.i_line
    rp = params.r_filter_parasitic

    di_f = ThreePhaseSample(
        (u_vsc.a - v.a - rp * i_f.a) * inv_lf,
        (u_vsc.b - v.b - rp * i_f.b) * inv_lf,
        (u_vsc.c - v.c - rp * i_f.c) * inv_lf,
    )

    if not fault_active or fault_location >= 1.0 - 1e-12:
        # single series branch: transformer lumped with the line
        inv_ll = w / (params.x_transformer + params.x_line)
        rl = params.r_line
        dv = ThreePhaseSample(
            (i_f.a - i_l.a) * inv_cf,
            (i_f.b - i_l.b) * inv_cf,
            (i_f.c - i_l.c) * inv_cf,
        )
        di_l = ThreePhaseSample(
            (v.a - v_sg.a - rl * i_l.a) * inv_ll,
            (v.b - v_sg.b - rl * i_l.b) * inv_ll,
            (v.c - v_sg.c - rl * i_l.c) * inv_ll,
        )
        return PlantState(di_f, dv, di_l), None

    loc = fault_location
    i_b = i_grid_side if i_grid_side is not None else i_l
    inv_la = w / (params.x_transformer + loc * params.x_line)
    inv_lb = w / ((1.0 - loc) * params.x_line)
    r_a = loc * params.r_line
    r_b = (1.0 - loc) * params.r_line
    rf = params.r_fault

    dv = ThreePhaseSample(
        (i_f.a - i_l.a) * inv_cf,
        (i_f.b - i_l.b) * inv_cf,
        (i_f.c - i_l.c) * inv_cf,
    )
    vf = ThreePhaseSample(
        rf * (i_l.a - i_b.a), rf * (i_l.b - i_b.b), rf * (i_l.c - i_b.c)
    )
    di_l = ThreePhaseSample(
        (v.a - vf.a - r_a * i_l.a) * inv_la,
        (v.b - vf.b - r_a * i_l.b) * inv_la,
        (v.c - vf.c - r_a * i_l.c) * inv_la,
    )
    di_b = ThreePhaseSample(
        (vf.a - v_sg.a - r_b * i_b.a) * inv_lb,
        (vf.b - v_sg.b - r_b * i_b.b) * inv_lb,
        (vf.c - v_sg.c - r_b * i_b.c) * inv_lb,
    )
    return PlantState(di_f, dv, di_l), di_b


def energize_fault_branch(state: PlantState) -> ThreePhaseSample:
    """Grid-side branch current at fault inception (continuous split)."""
    return state.i_line


def merge_fault_branch(
    state: PlantState,
    i_grid_side: ThreePhaseSample,
    params: NetworkParams,
    fault_location: float,
) -> PlantState:
    """Fold the two fault branches back into one line current at clearance.

    The merged current conserves total flux linkage of the two series
    inductances; the mismatch energy is dissipated, as in the arc it models.
    """
    l_a = params.x_transformer + fault_location * params.x_line
    l_b = (1.0 - fault_location) * params.x_line
    wa = l_a / (l_a + l_b)
    wb = 1.0 - wa
    merged = ThreePhaseSample(
        wa * state.i_line.a + wb * i_grid_side.a,
        wa * state.i_line.b + wb * i_grid_side.b,
        wa * state.i_line.c + wb * i_grid_side.c,
    )
    return PlantState(state.i_filter, state.v_pcc, merged)


def _check(values) -> None:
    for x in values:
        if not (abs(x) <= DIVERGENCE_LIMIT):
            raise PlantDiverged(f"state magnitude {x!r} outside +-{DIVERGENCE_LIMIT} pu")


def step(
    state: PlantState,
    t: float,
    dt: float,
    u_vsc: ThreePhaseSample,
    params: NetworkParams,
    base: PerUnitBase,
    fault_active: bool = False,
    fault_location: float = 0.0,
    i_grid_side: ThreePhaseSample | None = None,
    v_sg: ThreePhaseSample | None = None,
) -> tuple[PlantState, ThreePhaseSample | None]:
    """One classical RK4 step of ``dt`` seconds with ``u_vsc`` held constant.

    The fault activity flag is frozen over the step; the strong-grid source is
    evaluated at the stage times unless a fixed ``v_sg`` override is given
    (source-free and clamped-source experiments).  Deterministic: identical
    inputs give bit-identical outputs.  Raises :class:`PlantDiverged` when a
    state leaves the trusted region.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if dt > DT_MAX:
        raise ValueError(f"dt {dt} exceeds the stiffness cap {DT_MAX}")

    fault = fault_active and fault_location < 1.0 - 1e-12
    if fault and i_grid_side is None:
        i_grid_side = energize_fault_branch(state)

    x0 = state.as_array()
    b0 = np.array(i_grid_side, dtype=float) if fault else None

    def rhs(x, b, tt):
        sg = v_sg if v_sg is not None else strong_grid_voltage(tt, base)
        ds, db = derivatives(
            PlantState.from_array(x),
            u_vsc,
            sg,
            params,
            base,
            fault,
            fault_location,
            ThreePhaseSample(*b) if b is not None else None,
        )
        return ds.as_array(), (np.array(db, dtype=float) if db is not None else None)

    k1, kb1 = rhs(x0, b0, t)
    k2, kb2 = rhs(x0 + 0.5 * dt * k1, None if b0 is None else b0 + 0.5 * dt * kb1, t + 0.5 * dt)
    k3, kb3 = rhs(x0 + 0.5 * dt * k2, None if b0 is None else b0 + 0.5 * dt * kb2, t + 0.5 * dt)
    k4, kb4 = rhs(x0 + dt * k3, None if b0 is None else b0 + dt * kb3, t + dt)

    x1 = x0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    _check(x1)
    new_state = PlantState.from_array(x1)
    if b0 is None:
        return new_state, None
    b1 = b0 + (dt / 6.0) * (kb1 + 2.0 * kb2 + 2.0 * kb3 + kb4)
    _check(b1)
    return new_state, ThreePhaseSample(*b1)


def stored_energy(state: PlantState, params: NetworkParams, base: PerUnitBase) -> float:
    """Total magnetic + electric energy of the nine persistent states (pu*s)."""
    w = base.omega_nominal
    l_f = params.x_filter_l / w
    c_f = 1.0 / (w * abs(params.x_filter_c))
    l_l = (params.x_transformer + params.x_line) / w
    e = 0.0
    for x in state.i_filter:
        e += 0.5 * l_f * x * x
    for x in state.v_pcc:
        e += 0.5 * c_f * x * x
    for x in state.i_line:
        e += 0.5 * l_l * x * x
    return e


def power_audit(
    t: np.ndarray,
    states: np.ndarray,
    u_vsc: np.ndarray,
    params: NetworkParams,
    base: PerUnitBase,
) -> dict:
    """Energy balance over a sampled no-fault interval.

    ``states`` is (n, 9) at uniform spacing matching ``t``; ``u_vsc`` is
    (n, 3).  Trapezoidal integration of the instantaneous terminal, grid-bus
    and loss powers; the balance residual is relative to the VSC input.
    The strong-grid bus load is reported but, hanging on an ideal source,
    does not enter the converter-side balance.
    """
    i_f = states[:, 0:3]
    v = states[:, 3:6]
    i_l = states[:, 6:9]
    v_sg = np.array([strong_grid_voltage(tt, base) for tt in t])

    p_vsc = np.sum(u_vsc * i_f, axis=1)
    p_sg = np.sum(v_sg * i_l, axis=1)
    p_loss = params.r_filter_parasitic * np.sum(i_f**2, axis=1) + params.r_line * np.sum(
        i_l**2, axis=1
    )

    e_vsc = np.trapezoid(p_vsc, t)
    e_sg = np.trapezoid(p_sg, t)
    e_loss = np.trapezoid(p_loss, t)
    e_store = stored_energy(PlantState.from_array(states[-1]), params, base) - stored_energy(
        PlantState.from_array(states[0]), params, base
    )
    residual = e_vsc - (e_sg + e_loss + e_store)
    # the load on the rigid bus draws |v_sg_dq|^2 / r_load = 1.5/r_load pu
    p_load = 1.5 / params.r_load
    return {
        "e_vsc_in": e_vsc,
        "e_to_grid_bus": e_sg,
        "e_losses": e_loss,
        "e_storage_delta": e_store,
        "residual": residual,
        "residual_rel": abs(residual) / max(abs(e_vsc), 1e-30),
        "p_load_grid_bus": p_load,
    }
