import math
import random

import numpy as np
import pytest

from weakgrid import engine
from weakgrid.controller import (
    ControlParams,
    ControllerState,
    CurrentLoopState,
    PllState,
    TickResult,
    controller_tick,
    current_loop,
    current_references,
    pll_frequency,
    pll_update,
)
from weakgrid.frames import (
    DQ_PER_PEAK,
    DqVector,
    ThreePhaseSample,
    balanced_abc,
    instantaneous_power,
    nominal_base,
    wrap_angle,
)

rng = random.Random(7)
BASE = nominal_base()
CTRL = ControlParams()
ZERO3 = ThreePhaseSample(0.0, 0.0, 0.0)


def angle_diff(a: float, b: float) -> float:
    return abs(math.remainder(a - b, 2.0 * math.pi))


def test_params_validation():
    with pytest.raises(ValueError):
        ControlParams(kp_pll=0.0)
    with pytest.raises(ValueError):
        ControlParams(u_max=0.9)
    with pytest.raises(ValueError):
        ControlParams(t_sample=-1e-5)


def test_pll_locked_fixed_point():
    # start exactly locked: the error stays ~0 and the phase advances one tick
    pll = PllState(phase=0.0, integrator=0.0)
    for j in range(400):
        t = j * CTRL.t_sample
        assert angle_diff(pll.phase, BASE.omega_nominal * t) < 1e-9
        pll = pll_update(pll, balanced_abc(1.0, BASE.omega_nominal * t), CTRL, BASE)
    assert pll.integrator == pytest.approx(0.0, abs=1e-6)


def test_pll_dead_bus_ramps_at_learned_frequency():
    pll = PllState(phase=1.0, integrator=2.0)
    nxt = pll_update(pll, ZERO3, CTRL, BASE)
    assert pll_frequency(pll, BASE) == BASE.omega_nominal + 2.0
    assert nxt.integrator == 2.0
    assert nxt.phase == pytest.approx(
        wrap_angle(1.0 + (BASE.omega_nominal + 2.0) * CTRL.t_sample), abs=1e-12
    )


def test_pll_locks_from_one_radian():
    pll = PllState(phase=1.0, integrator=0.0)
    n = int(round(0.5 / CTRL.t_sample))
    for j in range(n):
        t = j * CTRL.t_sample
        pll = pll_update(pll, balanced_abc(1.0, BASE.omega_nominal * t), CTRL, BASE)
    err = angle_diff(pll.phase, BASE.omega_nominal * n * CTRL.t_sample)
    assert err < 0.01


def test_pll_error_shrinks_for_any_initial_offset():
    n = int(round(0.5 / CTRL.t_sample))
    for x0 in (0.2, 0.8, 1.2, math.pi / 2):
        pll = PllState(phase=x0, integrator=0.0)
        for j in range(n):
            t = j * CTRL.t_sample
            pll = pll_update(pll, balanced_abc(1.0, BASE.omega_nominal * t), CTRL, BASE)
        err = angle_diff(pll.phase, BASE.omega_nominal * n * CTRL.t_sample)
        assert err < x0


def test_current_references_unit_voltage():
    ref, guarded = current_references(DqVector(1.0, 0.0), 1.0, -0.2)
    assert not guarded
    assert ref.d == pytest.approx(1.0, rel=1e-12)
    assert ref.q == pytest.approx(-0.2, rel=1e-12)


def test_current_references_nominal_bus():
    ref, guarded = current_references(DqVector(math.sqrt(1.5), 0.0), 1.0, -0.2)
    assert not guarded
    assert ref.d == pytest.approx(0.816497, abs=1e-6)
    assert ref.q == pytest.approx(-0.163299, abs=1e-6)


def test_current_references_back_substitution():
    for _ in range(1000):
        mag = rng.uniform(0.6, 1.8)
        ang = rng.uniform(0, 2 * math.pi)
        v = DqVector(mag * math.cos(ang), mag * math.sin(ang))
        p_set = rng.uniform(-1, 1)
        q_set = rng.uniform(-1, 1)
        ref, guarded = current_references(v, p_set, q_set)
        if guarded:
            continue
        p, q = instantaneous_power(v, ref)
        assert p == pytest.approx(p_set, rel=1e-12, abs=1e-12)
        assert q == pytest.approx(q_set, rel=1e-12, abs=1e-12)


def test_current_references_floor_keeps_output_finite():
    ref, guarded = current_references(DqVector(0.001, 0.0), 1.0, 0.0, v_min=0.05, i_max=2.0)
    assert guarded
    # denominator floored at v_min^2 instead of dividing by ~0
    assert ref.d == pytest.approx(0.001 * 1.0 / 0.05**2, rel=1e-12)
    assert ref.q == 0.0


def test_current_references_magnitude_clamp_preserves_direction():
    big, guarded_big = current_references(DqVector(0.3, 0.1), 1.0, -0.2, i_max=1e9)
    assert not guarded_big
    clamped, guarded = current_references(DqVector(0.3, 0.1), 1.0, -0.2, i_max=2.0)
    assert guarded
    assert math.hypot(*clamped) == pytest.approx(2.0, rel=1e-12)
    scale = 2.0 / math.hypot(*big)
    assert clamped.d == pytest.approx(big.d * scale, rel=1e-9)
    assert clamped.q == pytest.approx(big.q * scale, rel=1e-9)


def test_current_loop_pure_feedforward_at_zero_error():
    v = DqVector(1.1, -0.2)
    u, s, sat = current_loop(v, DqVector(0.5, 0.1), DqVector(0.5, 0.1), CurrentLoopState(), CTRL)
    assert not sat
    assert u == v
    assert s == CurrentLoopState()


def test_current_loop_proportional_term():
    # wide cap so the raw proportional arithmetic is observable
    wide = ControlParams(u_max=10.0)
    u, _, sat = current_loop(
        DqVector(0.0, 0.0), DqVector(0.0, 0.0), DqVector(0.1, 0.0), CurrentLoopState(), wide
    )
    assert not sat
    assert u.d == pytest.approx(5.0, rel=1e-12)
    assert u.q == 0.0
    # at the shipped cap the same command saturates, scaled onto the limit
    u2, _, sat2 = current_loop(
        DqVector(0.0, 0.0), DqVector(0.0, 0.0), DqVector(0.1, 0.0), CurrentLoopState(), CTRL
    )
    assert sat2
    assert math.hypot(*u2) == pytest.approx(CTRL.u_max * DQ_PER_PEAK, rel=1e-12)


def test_current_loop_integrator_advance():
    wide = ControlParams(u_max=10.0)
    _, s, sat = current_loop(
        DqVector(0.0, 0.0), DqVector(0.0, 0.0), DqVector(0.1, -0.05), CurrentLoopState(), wide
    )
    assert not sat
    assert s.integ_d == pytest.approx(wide.ki_current * 0.1 * wide.t_sample, rel=1e-12)
    assert s.integ_q == pytest.approx(wide.ki_current * -0.05 * wide.t_sample, rel=1e-12)


def test_current_loop_saturation_freezes_integrators():
    state = CurrentLoopState(0.3, -0.1)
    u, s, sat = current_loop(
        DqVector(0.0, 0.0), DqVector(0.0, 0.0), DqVector(1.0, 0.0), state, CTRL
    )
    assert sat
    assert s == state  # conditional integration holds both axes
    assert math.hypot(*u) == pytest.approx(CTRL.u_max * DQ_PER_PEAK, rel=1e-12)


def test_anti_windup_over_dead_bus_interval():
    # ten cycles of dead bus with full current demand: integrators stay bounded
    ctrl = CTRL
    state = ControllerState.at(DqVector(0.0, 0.0), DqVector(1.0, -0.2), CurrentLoopState())
    n = int(round(0.2 / ctrl.t_sample))
    limit = 2.0 * ctrl.u_max * DQ_PER_PEAK
    for j in range(n):
        res = controller_tick(ZERO3, ZERO3, 0.0, state, ctrl)
        state = res.state
        assert abs(state.loop.integ_d) < limit
        assert abs(state.loop.integ_q) < limit


def test_controller_tick_zero_everything():
    state = ControllerState.at(DqVector(0.0, 0.0), DqVector(0.0, 0.0), CurrentLoopState())
    for j in range(50):
        res = controller_tick(ZERO3, ZERO3, 0.3 * j, state, CTRL)
        state = res.state
        assert res.u_abc == (0.0, 0.0, 0.0)
        assert res.p == 0.0 and res.q == 0.0


def test_controller_tick_reports_guard_on_collapsed_bus():
    state = ControllerState.at(DqVector(0.01, 0.0), DqVector(0.5, 0.0), CurrentLoopState())
    res = controller_tick(ThreePhaseSample(0.01, -0.005, -0.005), ZERO3, 0.0, state, CTRL)
    assert res.voltage_guard
    # held reference reused while collapsed
    assert res.state.held_ref == state.held_ref


def test_closed_loop_reference_step_settles_quickly():
    """Direct current-reference step on the physical plant: settled in 2 ms."""
    from weakgrid.plant import NetworkParams
    from weakgrid.frames import abc_to_dq, dq_to_abc
    from weakgrid.scenario import solve_operating_point

    params = NetworkParams()
    op = solve_operating_point(params, CTRL, BASE)
    x = np.zeros(engine.STATE_SIZE)
    x[:9] = np.concatenate(
        [
            dq_to_abc(DqVector(op.i_filter.real, op.i_filter.imag), 0.0),
            dq_to_abc(DqVector(op.v_pcc.real, op.v_pcc.imag), 0.0),
            dq_to_abc(DqVector(op.i_line.real, op.i_line.imag), 0.0),
        ]
    )
    pvec = engine.pack_params(params, BASE, 0.0)
    scratch = engine.new_scratch()
    fault_phase = engine.new_fault_phase()
    loop = CurrentLoopState(
        op.u_vsc.real - op.v_pcc.real, op.u_vsc.imag - op.v_pcc.imag
    )
    i_ref = DqVector(op.i_filter.real + 0.1, op.i_filter.imag)

    m = int(round(CTRL.t_sample / 2e-6))
    n = int(round(0.004 / CTRL.t_sample))
    errors = []
    for j in range(n):
        t = j * CTRL.t_sample
        theta = BASE.omega_nominal * t
        v_dq = abc_to_dq(ThreePhaseSample(x[3], x[4], x[5]), theta)
        i_dq = abc_to_dq(ThreePhaseSample(x[0], x[1], x[2]), theta)
        u_dq, loop, _ = current_loop(v_dq, i_dq, i_ref, loop, CTRL)
        u = dq_to_abc(u_dq, theta)
        engine.integrate_span(x, j * m, m, 2e-6, u.a, u.b, u.c, pvec, -1, fault_phase, scratch)
        errors.append(math.hypot(i_ref.d - i_dq.d, i_ref.q - i_dq.q))
    settled = [e for t_i, e in zip(np.arange(n) * CTRL.t_sample, errors) if t_i >= 0.002]
    assert max(settled) < 0.01  # within 10% of the 0.1 pu step after 2 ms


def test_tick_result_shape():
    state = ControllerState.at(DqVector(1.0, 0.0), DqVector(1.0, -0.2), CurrentLoopState())
    res = controller_tick(balanced_abc(1.0, 0.0), ZERO3, 0.0, state, CTRL)
    assert isinstance(res, TickResult)
    assert isinstance(res.state, ControllerState)
