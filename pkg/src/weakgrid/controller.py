"""Discrete-time control: SRF-PLL, power-to-current-reference rule and dq PI
current loops with output-voltage feedforward.

All loops run at the fixed sample time ``t_sample`` with forward-Euler
integrator accumulation and zero-order hold between ticks.  The PLL gains are
per-unit quantities: the proportional and integral paths produce a per-unit
frequency correction that is scaled by the nominal angular frequency, so the
locked loop has a natural frequency of sqrt(ki_pll * w_N * K) rad/s for an
input of dq magnitude K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .frames import (
    DQ_PER_PEAK,
    DqVector,
    PerUnitBase,
    ThreePhaseSample,
    abc_to_dq,
    dq_to_abc,
    instantaneous_power,
    wrap_angle,
)


@dataclass(frozen=True)
class ControlParams:
    """Gains, set points and limits of the control system.

    ``u_max`` caps the commanded peak phase amplitude (finite DC bus);
    ``v_min`` floors the voltage magnitude in the current-reference rule so a
    collapsed bus cannot blow up the references; ``i_max`` caps the reference
    magnitude.  ``decoupling_x`` is the reactance used for optional dq
    cross-decoupling; 0 disables it.  ``ref_filter_hz`` sets the corner of the
    two-stage low-pass on the voltage feeding the reference rule, and below
    ``lvrt_v_hold`` (pu peak) the last healthy reference is held ride-through
    style.
    """

    kp_pll: float = 0.3
    ki_pll: float = 100.0
    kp_current: float = 50.0
    ki_current: float = 2000.0
    p_set: float = 1.0
    q_set: float = -0.2
    t_sample: float = 5e-5
    u_max: float = 2.0
    v_min: float = 0.05
    i_max: float = 2.0
    decoupling_x: float = 0.0
    ref_filter_hz: float = 50.0
    lvrt_v_hold: float = 0.6

    def __post_init__(self):
        for name in ("kp_pll", "ki_pll", "kp_current", "ki_current", "t_sample"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.u_max <= 1.0:
            raise ValueError("u_max must exceed 1 pu")
        if self.v_min <= 0.0:
            raise ValueError("v_min must be positive")
        if self.i_max <= 0.0:
            raise ValueError("i_max must be positive")
        if self.decoupling_x < 0.0:
            raise ValueError("decoupling_x must be non-negative")
        if self.ref_filter_hz < 0.0:
            raise ValueError("ref_filter_hz must be non-negative")
        if self.lvrt_v_hold < 0.0:
            raise ValueError("lvrt_v_hold must be non-negative")

    @property
    def ref_filter_alpha(self) -> float:
        """Per-tick pole of the reference-voltage low-pass (1 disables it)."""
        if self.ref_filter_hz == 0.0:
            return 1.0
        return 1.0 - math.exp(-2.0 * math.pi * self.ref_filter_hz * self.t_sample)


@dataclass(frozen=True)
class PllState:
    """Estimated phase (wrapped) and the integral frequency correction (rad/s)."""

    phase: float = 0.0
    integrator: float = 0.0


@dataclass(frozen=True)
class CurrentLoopState:
    integ_d: float = 0.0
    integ_q: float = 0.0


def pll_update(
    s: PllState, v_sync: ThreePhaseSample, p: ControlParams, base: PerUnitBase
) -> PllState:
    """One SRF-PLL tick on the selected synchronization voltage.

    The q component of ``v_sync`` in the current frame drives a PI frequency
    correction; at lock the phase tracks the positive-sequence angle.  On a
    dead bus the correction input vanishes and the phase keeps ramping at the
    last learned frequency.
    """
    w_n = base.omega_nominal
    e = abc_to_dq(v_sync, s.phase).q
    integ = s.integrator + p.ki_pll * w_n * e * p.t_sample
    omega = w_n + p.kp_pll * w_n * e + integ
    phase = wrap_angle(s.phase + omega * p.t_sample)
    return PllState(phase, integ)


def pll_frequency(s: PllState, base: PerUnitBase) -> float:
    """Frequency the PLL would ramp at with zero input (rad/s)."""
    return base.omega_nominal + s.integrator


def current_references(
    v_o: DqVector,
    p_set: float,
    q_set: float,
    v_min: float = 0.05,
    i_max: float = 2.0,
) -> tuple[DqVector, bool]:
    """Inductor current references for the commanded powers.

    Substituting the result back into the power expressions recovers the set
    points exactly whenever neither guard engages.  Returns the reference and
    a flag saying a guard (voltage floor or magnitude clamp) was active.
    """
    den = v_o.d * v_o.d + v_o.q * v_o.q
    guarded = den < v_min * v_min
    if guarded:
        den = v_min * v_min
    i_d = (v_o.d * p_set - v_o.q * q_set) / den
    i_q = (v_o.q * p_set + v_o.d * q_set) / den
    mag = math.hypot(i_d, i_q)
    if mag > i_max:
        scale = i_max / mag
        i_d *= scale
        i_q *= scale
        guarded = True
    return DqVector(i_d, i_q), guarded


def current_loop(
    v_o: DqVector,
    i_l: DqVector,
    i_ref: DqVector,
    s: CurrentLoopState,
    p: ControlParams,
) -> tuple[DqVector, CurrentLoopState, bool]:
    """PI current regulators with output-voltage feedforward.

    The command magnitude is capped at the dq equivalent of ``u_max`` peak
    phase amplitude; while the cap is active both integrators hold their
    values (conditional integration anti-windup).  Returns the command, the
    advanced state and the saturation flag.
    """
    e_d = i_ref.d - i_l.d
    e_q = i_ref.q - i_l.q
    u_d = v_o.d + p.kp_current * e_d + s.integ_d - p.decoupling_x * i_l.q
    u_q = v_o.q + p.kp_current * e_q + s.integ_q + p.decoupling_x * i_l.d
    limit = p.u_max * DQ_PER_PEAK
    mag = math.hypot(u_d, u_q)
    if mag > limit:
        scale = limit / mag
        return DqVector(u_d * scale, u_q * scale), s, True
    new_state = CurrentLoopState(
        s.integ_d + p.ki_current * e_d * p.t_sample,
        s.integ_q + p.ki_current * e_q * p.t_sample,
    )
    return DqVector(u_d, u_q), new_state, False


class RefFilterState(NamedTuple):
    """Two cascaded first-order stages smoothing the reference-rule voltage."""

    s1: DqVector
    s2: DqVector

    @staticmethod
    def at(v: DqVector) -> "RefFilterState":
        return RefFilterState(v, v)


def ref_filter_update(state: RefFilterState, v_dq: DqVector, p: ControlParams) -> RefFilterState:
    a = p.ref_filter_alpha
    s1 = DqVector(state.s1.d + a * (v_dq.d - state.s1.d), state.s1.q + a * (v_dq.q - state.s1.q))
    s2 = DqVector(state.s2.d + a * (s1.d - state.s2.d), state.s2.q + a * (s1.q - state.s2.q))
    return RefFilterState(s1, s2)


@dataclass(frozen=True)
class ControllerState:
    """Everything the discrete controller carries between ticks."""

    loop: CurrentLoopState
    ref_filter: RefFilterState
    held_ref: DqVector

    @staticmethod
    def at(v_dq: DqVector, i_ref: DqVector, loop: CurrentLoopState) -> "ControllerState":
        return ControllerState(loop, RefFilterState.at(v_dq), i_ref)


class TickResult(NamedTuple):
    u_abc: ThreePhaseSample
    state: ControllerState
    v_dq: DqVector
    i_dq: DqVector
    p: float
    q: float
    voltage_guard: bool
    saturated: bool


def controller_tick(
    meas_v_o: ThreePhaseSample,
    meas_i_l: ThreePhaseSample,
    sync_angle: float,
    s: ControllerState,
    p: ControlParams,
) -> TickResult:
    """Full control path for one sample: measurements to abc voltage command.

    Measurements are projected with ``sync_angle``, the references and PI
    commands computed, and the command rotated back with the same angle.

    Two guards shape behaviour outside normal conditions.  The reference rule
    consumes the low-passed voltage from the filter state: recomputing
    references from the raw instantaneous voltage couples the measurement
    into the command with gain ~ kp_current * |s_set|/|v|^2, positive
    feedback strong enough to drive the lightly damped filter resonance into
    a limit cycle (the voltage feedforward itself stays unfiltered).  And
    while the bus voltage sits below the ride-through threshold the last
    healthy current reference is held instead of chasing the collapsed
    measurement; the hold releases as soon as the voltage recovers.
    """
    v_dq = abc_to_dq(meas_v_o, sync_angle)
    i_dq = abc_to_dq(meas_i_l, sync_angle)
    filt = ref_filter_update(s.ref_filter, v_dq, p)
    v_f = filt.s2
    hold_below = p.lvrt_v_hold * DQ_PER_PEAK
    collapsed = v_f.d * v_f.d + v_f.q * v_f.q < hold_below * hold_below
    if collapsed:
        i_ref, guard = s.held_ref, True
    else:
        i_ref, guard = current_references(v_f, p.p_set, p.q_set, p.v_min, p.i_max)
    u_dq, new_loop, saturated = current_loop(v_dq, i_dq, i_ref, s.loop, p)
    u_abc = dq_to_abc(u_dq, sync_angle)
    p_out, q_out = instantaneous_power(v_dq, i_dq)
    new_state = ControllerState(new_loop, filt, i_ref)
    return TickResult(u_abc, new_state, v_dq, i_dq, p_out, q_out, guard, saturated)
