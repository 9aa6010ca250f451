"""Closed-loop scenario runner: plant + controller + synchronization link,
plus post-run metrics (stability classification, settling times, SCR) and the
line-impedance sweep.

Runs are deterministic: all scheduling happens on integer plant-step and
controller-tick indices, there is no randomness and no thread interleaving,
so identical scenarios produce bit-identical traces.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import engine
from .controller import (
    ControlParams,
    ControllerState,
    CurrentLoopState,
    PllState,
    controller_tick,
    current_references,
    pll_update,
)
from .frames import (
    DQ_PER_PEAK,
    DqVector,
    PerUnitBase,
    ThreePhaseSample,
    dq_to_abc,
    wrap_angle,
)
from .plant import FaultWindow, NetworkParams, strong_grid_voltage
from .synclink import DelayChannel, SyncMode, compensate_angle

FLAG_VOLTAGE_FLOOR = 1
FLAG_SATURATED = 2
FLAG_DIVERGED = 4

FLAG_NAMES = {
    FLAG_VOLTAGE_FLOOR: "voltage-floor",
    FLAG_SATURATED: "saturated",
    FLAG_DIVERGED: "diverged",
}

STABLE = "stable"
UNSTABLE_OSCILLATORY = "unstable-oscillatory"
UNSTABLE_DIVERGED = "unstable-diverged"

NOT_SETTLED = math.inf

# classification thresholds: absolute band around the set points and
# allowed peak-to-peak real-power ripple over the final window
CLASS_BAND = 0.05
CLASS_RIPPLE = 0.02
CLASS_WINDOW = 0.2
POST_FAULT_MARGIN = 0.5


class InsufficientTrace(ValueError):
    """The trace does not extend far enough beyond fault clearance."""


@dataclass(frozen=True)
class Scenario:
    """Complete parameterization of one closed-loop run."""

    base: PerUnitBase
    network: NetworkParams
    control: ControlParams
    sync_mode: SyncMode
    fault: FaultWindow
    delay: float = 0.0
    compensation_enabled: bool = False
    t_end: float = 2.5
    dt_plant: float = 2e-6
    label: str = "scenario"
    sync_angle_offset: float = 0.0

    def __post_init__(self):
        if self.dt_plant <= 0.0:
            raise ValueError("dt_plant must be positive")
        if self.dt_plant > 5e-6:
            raise ValueError("dt_plant exceeds the 5e-6 s stiffness cap")
        ts = self.control.t_sample
        m = ts / self.dt_plant
        if abs(m - round(m)) > 1e-9 or round(m) < 1:
            raise ValueError("dt_plant must divide t_sample evenly")
        if self.t_end <= self.fault.t_clear(self.base):
            raise ValueError("t_end must lie beyond the fault clearance")
        if self.delay < 0.0:
            raise ValueError("delay must be non-negative")
        if self.delay > 0.0:
            if self.sync_mode is SyncMode.PCC:
                raise ValueError("a communication delay applies only to strong-grid sync")
            k = self.delay / ts
            if abs(k - round(k)) > 1e-9:
                raise ValueError("delay must be an integer multiple of t_sample")

    @property
    def steps_per_tick(self) -> int:
        return int(round(self.control.t_sample / self.dt_plant))

    @property
    def n_ticks(self) -> int:
        return int(round(self.t_end / self.control.t_sample))

    @property
    def delay_ticks(self) -> int:
        return int(round(self.delay / self.control.t_sample))


@dataclass(frozen=True)
class TraceRow:
    t: float
    v_pcc_dq: DqVector
    i_l_dq: DqVector
    p: float
    q: float
    pll_angle: float
    flags: int


@dataclass
class Trace:
    """Row-per-controller-tick record of the quantities of interest."""

    t: np.ndarray
    v_d: np.ndarray
    v_q: np.ndarray
    i_d: np.ndarray
    i_q: np.ndarray
    p: np.ndarray
    q: np.ndarray
    pll_angle: np.ndarray
    flags: np.ndarray
    label: str = ""
    sync_mode: str = ""
    plant_log: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.t)

    def row(self, i: int) -> TraceRow:
        return TraceRow(
            float(self.t[i]),
            DqVector(float(self.v_d[i]), float(self.v_q[i])),
            DqVector(float(self.i_d[i]), float(self.i_q[i])),
            float(self.p[i]),
            float(self.q[i]),
            float(self.pll_angle[i]),
            int(self.flags[i]),
        )

    @property
    def diverged(self) -> bool:
        return bool(len(self.flags) and (self.flags & FLAG_DIVERGED).any())


@dataclass(frozen=True)
class Metrics:
    stable: str
    settle_time_p: float
    settle_time_q: float
    settle_time_v: float
    overshoot_p: float
    scr: float
    steady_p: float
    steady_q: float

    def as_dict(self) -> dict:
        return {
            "stable": self.stable,
            "settle_time_p": self.settle_time_p,
            "settle_time_q": self.settle_time_q,
            "settle_time_v": self.settle_time_v,
            "overshoot_p": self.overshoot_p,
            "scr": self.scr,
            "steady_p": self.steady_p,
            "steady_q": self.steady_q,
        }


@dataclass(frozen=True)
class OperatingPoint:
    """Balanced positive-sequence steady state, as complex dq phasors in the
    frame aligned with the strong-grid voltage."""

    v_pcc: complex
    i_filter: complex
    i_line: complex
    u_vsc: complex


def solve_operating_point(
    network: NetworkParams, control: ControlParams, base: PerUnitBase
) -> OperatingPoint:
    """Steady state at the power set points against the rigid source.

    Power-invariant phasors (s = v * conj(i) without 3/2 factors); Newton on
    the PCC voltage with a finite-difference Jacobian.
    """
    s_full = control.p_set - 1j * control.q_set
    v_sg = DQ_PER_PEAK + 0.0j
    z_line = network.r_line + 1j * (network.x_transformer + network.x_line)
    y_cap = 1j / abs(network.x_filter_c)

    def residual(v: complex, s_cplx: complex) -> complex:
        return (s_cplx / v).conjugate() - v * y_cap - (v - v_sg) / z_line

    def newton(v: complex, s_cplx: complex) -> complex | None:
        h = 1e-7
        for _ in range(80):
            f = residual(v, s_cplx)
            if abs(f) < 1e-13:
                return v
            fr = residual(v + h, s_cplx)
            fi = residual(v + 1j * h, s_cplx)
            jac = np.array(
                [
                    [(fr.real - f.real) / h, (fi.real - f.real) / h],
                    [(fr.imag - f.imag) / h, (fi.imag - f.imag) / h],
                ]
            )
            try:
                dv = np.linalg.solve(jac, np.array([f.real, f.imag]))
            except np.linalg.LinAlgError:
                return None
            step = complex(dv[0], dv[1])
            # damped update: halve the step until the residual improves
            scale = 1.0
            for _ in range(30):
                v_new = v - scale * step
                if abs(v_new) > 0.05 and abs(residual(v_new, s_cplx)) < abs(f):
                    break
                scale *= 0.5
            else:
                return None
            v = v_new
        return None

    # plain Newton from the rigid-source voltage; on heavily loaded weak
    # lines, continue in the power level so each stage starts near its root
    v = newton(v_sg, s_full)
    if v is None:
        v = v_sg
        for frac in (0.25, 0.5, 0.75, 0.9, 1.0):
            v = newton(v, frac * s_full)
            if v is None:
                break
    if v is None:
        raise ValueError(
            "no steady operating point for these parameters "
            "(set points beyond the line loadability)"
        )

    i_filter = (s_full / v).conjugate()
    i_line = (v - v_sg) / z_line
    u = v + (network.r_filter_parasitic + 1j * network.x_filter_l) * i_filter
    return OperatingPoint(v, i_filter, i_line, u)


def idle_operating_point(network: NetworkParams) -> OperatingPoint:
    """Zero-injection network state: converter idling at the local voltage.

    Used to start runs whose set points exceed the line loadability; those
    runs can never settle and are classified from their actual behaviour.
    """
    v_sg = DQ_PER_PEAK + 0.0j
    z_line = network.r_line + 1j * (network.x_transformer + network.x_line)
    y_cap = 1j / abs(network.x_filter_c)
    v = v_sg / (1.0 + z_line * y_cap)
    i_line = (v - v_sg) / z_line
    return OperatingPoint(v, 0.0 + 0.0j, i_line, v)


def _phasor_to_abc(f: complex) -> ThreePhaseSample:
    # grid angle is zero at t = 0, so dq components equal phasor components
    return dq_to_abc(DqVector(f.real, f.imag), 0.0)


def _initial_conditions(scenario: Scenario):
    """Plant states, controller states and the synchronization angle at t=0."""
    try:
        op = solve_operating_point(scenario.network, scenario.control, scenario.base)
    except ValueError:
        op = idle_operating_point(scenario.network)

    x = np.zeros(engine.STATE_SIZE)
    x[0:3] = _phasor_to_abc(op.i_filter)
    x[3:6] = _phasor_to_abc(op.v_pcc)
    x[6:9] = _phasor_to_abc(op.i_line)

    if scenario.sync_mode is SyncMode.PCC:
        phase0 = wrap_angle(cmath.phase(op.v_pcc))
    else:
        phase0 = 0.0
    frame0 = wrap_angle(phase0 + scenario.sync_angle_offset)

    rot = cmath.exp(-1j * frame0)
    v_dq0 = op.v_pcc * rot
    i_dq0 = op.i_filter * rot
    u_dq0 = op.u_vsc * rot
    dec = scenario.control.decoupling_x
    cloop0 = CurrentLoopState(
        u_dq0.real - v_dq0.real + dec * i_dq0.imag,
        u_dq0.imag - v_dq0.imag - dec * i_dq0.real,
    )
    pll0 = PllState(phase=phase0, integrator=0.0)
    v0 = DqVector(v_dq0.real, v_dq0.imag)
    i_ref0, _ = current_references(
        v0, scenario.control.p_set, scenario.control.q_set,
        scenario.control.v_min, scenario.control.i_max,
    )
    ctrl0 = ControllerState.at(v0, i_ref0, cloop0)
    return op, x, pll0, ctrl0


def run(scenario: Scenario, plant_rate_log: bool = False):
    """Deterministic closed-loop simulation.

    Returns ``(trace, metrics)``; with ``plant_rate_log`` additionally a
    (t, 9-state) array sampled at every plant step is attached to the trace as
    ``trace.plant_log``.  Divergence is recorded in the metrics, it is not an
    error of the harness.
    """
    base = scenario.base
    ctrl = scenario.control
    ts = ctrl.t_sample
    dt = scenario.dt_plant
    m = scenario.steps_per_tick
    n_ticks = scenario.n_ticks

    fault = scenario.fault
    t_clear = fault.t_clear(base)
    if fault.location >= 1.0 - 1e-12:
        k_on = -1  # fault sits on the rigid bus: no converter-side effect
    else:
        k_on = int(round(fault.t_start / dt))

    params_vec = engine.pack_params(scenario.network, base, fault.location)
    scratch = engine.new_scratch()
    fault_phase = engine.new_fault_phase()
    prev_shunt = np.zeros(3)
    armed = False

    op, x, pll, ctrl_state = _initial_conditions(scenario)

    channel = None
    if scenario.sync_mode is SyncMode.STRONG_GRID and scenario.delay_ticks > 0:
        channel = DelayChannel(scenario.delay)
        # the remote loop has watched the rigid bus forever: back-fill its
        # locked history so early pops are well defined; a locked update at
        # time s publishes the phase advanced through that tick
        for k in range(scenario.delay_ticks, 0, -1):
            stamp = -k * ts
            channel.push(stamp, wrap_angle(base.omega_nominal * (stamp + ts)))

    t_arr = np.empty(n_ticks)
    v_d = np.empty(n_ticks)
    v_q = np.empty(n_ticks)
    i_d = np.empty(n_ticks)
    i_q = np.empty(n_ticks)
    p_arr = np.empty(n_ticks)
    q_arr = np.empty(n_ticks)
    ang = np.empty(n_ticks)
    flags = np.zeros(n_ticks, dtype=np.uint8)

    log = None
    if plant_rate_log:
        log = np.empty((n_ticks * m, 10))

    pcc_mode = scenario.sync_mode is SyncMode.PCC
    offset = scenario.sync_angle_offset
    n_rows = n_ticks

    for j in range(n_ticks):
        t = j * ts
        # past the fault window, open each shunt at its first current zero;
        # deciding on the tick grid keeps the event time step-size independent
        if t >= t_clear - 1e-12 and fault_phase.any():
            if not armed:
                prev_shunt[:] = x[6:9] - x[9:12]
                armed = True
            else:
                engine.open_cleared_phases(x, params_vec, fault_phase, prev_shunt)
        v_meas = ThreePhaseSample(x[3], x[4], x[5])
        i_meas = ThreePhaseSample(x[0], x[1], x[2])

        if pcc_mode:
            pll = pll_update(pll, v_meas, ctrl, base)
            sync = pll.phase
        else:
            pll = pll_update(pll, strong_grid_voltage(t, base), ctrl, base)
            if channel is not None:
                channel.push(t, pll.phase)
                phi_tau = channel.pop(t)
                sync = (
                    compensate_angle(phi_tau, scenario.delay, base)
                    if scenario.compensation_enabled
                    else phi_tau
                )
            else:
                sync = pll.phase

        angle_used = wrap_angle(sync + offset) if offset else sync
        res = controller_tick(v_meas, i_meas, angle_used, ctrl_state, ctrl)
        ctrl_state = res.state

        t_arr[j] = t
        v_d[j] = res.v_dq.d
        v_q[j] = res.v_dq.q
        i_d[j] = res.i_dq.d
        i_q[j] = res.i_dq.q
        p_arr[j] = res.p
        q_arr[j] = res.q
        ang[j] = angle_used
        fl = 0
        if res.voltage_guard:
            fl |= FLAG_VOLTAGE_FLOOR
        if res.saturated:
            fl |= FLAG_SATURATED
        flags[j] = fl

        if log is not None:
            diverged = _span_with_log(
                x, j * m, m, dt, res.u_abc, params_vec, k_on, fault_phase, scratch, log
            )
        else:
            diverged = engine.integrate_span(
                x, j * m, m, dt, res.u_abc.a, res.u_abc.b, res.u_abc.c,
                params_vec, k_on, fault_phase, scratch,
            )
        if diverged:
            flags[j] |= FLAG_DIVERGED
            n_rows = j + 1
            break

    trace = Trace(
        t=t_arr[:n_rows].copy(),
        v_d=v_d[:n_rows].copy(),
        v_q=v_q[:n_rows].copy(),
        i_d=i_d[:n_rows].copy(),
        i_q=i_q[:n_rows].copy(),
        p=p_arr[:n_rows].copy(),
        q=q_arr[:n_rows].copy(),
        pll_angle=ang[:n_rows].copy(),
        flags=flags[:n_rows].copy(),
        label=scenario.label,
        sync_mode=scenario.sync_mode.value,
        plant_log=log[: n_rows * m] if log is not None else None,
    )

    metrics = compute_metrics(trace, scenario)
    return trace, metrics


def _span_with_log(x, k_start, m, dt, u_abc, params_vec, k_on, fault_phase, scratch, log):
    """Step-at-a-time variant that records every plant state (debug dumps)."""
    for i in range(m):
        k = k_start + i
        diverged = engine.integrate_span(
            x, k, 1, dt, u_abc.a, u_abc.b, u_abc.c, params_vec, k_on, fault_phase, scratch
        )
        log[k, 0] = (k + 1) * dt
        log[k, 1:10] = x[:9]
        if diverged:
            return 1
    return 0


# --- metrics -----------------------------------------------------------------


def compute_scr(n: NetworkParams) -> float:
    """Reciprocal of the series impedance magnitude between PCC and source.

    This package defines SCR = 1/|r_line + j(x_line + x_transformer)|; other
    conventions exist, so compare values only within this definition.
    """
    return 1.0 / abs(complex(n.r_line, n.x_line + n.x_transformer))


def classify_stability(
    trace: Trace,
    scenario: Scenario,
    band: float = CLASS_BAND,
    ripple: float = CLASS_RIPPLE,
) -> str:
    """Classify the post-fault behaviour of a run.

    Diverged runs are flagged directly; otherwise the trace must hold both
    powers within ``band`` of their set points over the final window with a
    bounded real-power ripple.
    """
    if trace.diverged:
        return UNSTABLE_DIVERGED
    t_clear = scenario.fault.t_clear(scenario.base)
    t_last = trace.t[-1] + scenario.control.t_sample
    if t_last < t_clear + POST_FAULT_MARGIN - 1e-9:
        raise InsufficientTrace(
            f"trace ends {t_last:.3f}s, needs {POST_FAULT_MARGIN}s beyond clearance {t_clear:.3f}s"
        )
    sel = trace.t >= trace.t[-1] - CLASS_WINDOW + 1e-12
    p_win = trace.p[sel]
    q_win = trace.q[sel]
    ok = (
        np.all(np.abs(p_win - scenario.control.p_set) <= band)
        and np.all(np.abs(q_win - scenario.control.q_set) <= band)
        and (p_win.max() - p_win.min()) <= ripple
    )
    return STABLE if ok else UNSTABLE_OSCILLATORY


def settling_time(
    trace: Trace,
    channel: str,
    band: float,
    scenario: Scenario,
) -> float:
    """Seconds after fault clearance until the channel stays inside the band.

    ``channel`` is one of ``p``, ``q``, ``v``.  For the powers the band is a
    fraction of rated power (1 pu) around the set point; for the voltage it is
    relative to the pre-fault steady magnitude.  Returns ``math.inf`` when the
    channel never settles within the trace.
    """
    t_clear = scenario.fault.t_clear(scenario.base)
    if channel == "p":
        values = trace.p
        target = scenario.control.p_set
        threshold = band
    elif channel == "q":
        values = trace.q
        target = scenario.control.q_set
        threshold = band
    elif channel == "v":
        values = np.hypot(trace.v_d, trace.v_q)
        pre = trace.t < scenario.fault.t_start
        pre_win = pre & (trace.t >= scenario.fault.t_start - 0.1)
        if not pre_win.any():
            pre_win = pre
        target = float(values[pre_win].mean()) if pre_win.any() else float(values[0])
        threshold = band * abs(target)
    else:
        raise ValueError(f"unknown settling channel {channel!r}")

    post = trace.t >= t_clear - 1e-12
    if not post.any():
        return NOT_SETTLED
    t_post = trace.t[post]
    inside = np.abs(values[post] - target) <= threshold
    if not inside.all():
        last_bad = np.where(~inside)[0][-1]
        if last_bad + 1 >= len(inside):
            return NOT_SETTLED
        first_ok = last_bad + 1
    else:
        first_ok = 0
    return float(t_post[first_ok] - t_clear)


def compute_metrics(trace: Trace, scenario: Scenario, band: float = 0.02) -> Metrics:
    stable = classify_stability(trace, scenario)
    t_clear = scenario.fault.t_clear(scenario.base)
    post = trace.t >= t_clear - 1e-12
    overshoot = float(np.max(trace.p[post] - scenario.control.p_set)) if post.any() else 0.0
    win = trace.t >= trace.t[-1] - CLASS_WINDOW + 1e-12
    return Metrics(
        stable=stable,
        settle_time_p=settling_time(trace, "p", band, scenario),
        settle_time_q=settling_time(trace, "q", band, scenario),
        settle_time_v=settling_time(trace, "v", band, scenario),
        overshoot_p=max(overshoot, 0.0),
        scr=compute_scr(scenario.network),
        steady_p=float(trace.p[win].mean()),
        steady_q=float(trace.q[win].mean()),
    )


# --- impedance sweep ---------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    x_line: float
    mode: str
    classification: str


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)
    crossover_x: float | None = None
    dominance_violations: list[float] = field(default_factory=list)

    def classification(self, x_line: float, mode: str) -> str:
        for row in self.rows:
            if row.x_line == x_line and row.mode == mode:
                return row.classification
        raise KeyError((x_line, mode))


def impedance_sweep(template: Scenario, x_values) -> SweepResult:
    """Classify both synchronization modes at each line reactance.

    The line resistance is scaled with the reactance to keep the template's
    X/R ratio.  The crossover is the smallest reactance where PCC sync fails
    while strong-grid sync survives; entries where the reverse holds are
    returned as dominance violations.
    """
    x_values = list(x_values)
    if any(b <= a for a, b in zip(x_values, x_values[1:])):
        raise ValueError("x_values must be strictly increasing")
    ratio = template.network.x_line / template.network.r_line
    result = SweepResult()
    for x in x_values:
        network = replace(template.network, x_line=x, r_line=x / ratio)
        outcome = {}
        for mode in (SyncMode.PCC, SyncMode.STRONG_GRID):
            scen = replace(
                template,
                network=network,
                sync_mode=mode,
                delay=0.0,
                compensation_enabled=False,
                label=f"{template.label}_sweep",
            )
            _, metrics = run(scen)
            outcome[mode] = metrics.stable
            result.rows.append(SweepRow(x, mode.value, metrics.stable))
        pcc_ok = outcome[SyncMode.PCC] == STABLE
        sg_ok = outcome[SyncMode.STRONG_GRID] == STABLE
        if not pcc_ok and sg_ok and result.crossover_x is None:
            result.crossover_x = x
        if pcc_ok and not sg_ok:
            result.dominance_violations.append(x)
    return result
