import math

import numpy as np
import pytest

from weakgrid import engine
from weakgrid.frames import (
    DqVector,
    ThreePhaseSample,
    abc_to_dq,
    dq_to_abc,
    nominal_base,
)
from weakgrid.plant import (
    FaultWindow,
    NetworkParams,
    PlantDiverged,
    PlantState,
    derivatives,
    fault_is_active,
    power_audit,
    step,
    stored_energy,
    strong_grid_voltage,
)
from weakgrid.scenario import solve_operating_point
from weakgrid.controller import ControlParams

BASE = nominal_base()
ZERO3 = ThreePhaseSample(0.0, 0.0, 0.0)


def test_network_params_validation():
    with pytest.raises(ValueError):
        NetworkParams(x_filter_c=182.7)
    with pytest.raises(ValueError):
        NetworkParams(x_filter_l=0.0)
    with pytest.raises(ValueError):
        NetworkParams(r_fault=0.0)


def test_fault_window_validation():
    with pytest.raises(ValueError):
        FaultWindow(t_start=-1.0)
    with pytest.raises(ValueError):
        FaultWindow(duration_cycles=0.0)
    with pytest.raises(ValueError):
        FaultWindow(location=1.5)


def test_fault_window_half_open():
    w = FaultWindow(t_start=1.0, duration_cycles=10.0)
    assert not fault_is_active(0.999999, w, BASE)
    assert fault_is_active(1.0, w, BASE)
    assert fault_is_active(1.19999, w, BASE)
    # ten cycles at 50 Hz last exactly 0.2 s
    assert not fault_is_active(1.2, w, BASE)


def test_zero_equilibrium_derivatives():
    ds, db = derivatives(PlantState.zero(), ZERO3, ZERO3, NetworkParams(), BASE)
    assert db is None
    for group in (ds.i_filter, ds.v_pcc, ds.i_line):
        assert group == (0.0, 0.0, 0.0)


def test_zero_equilibrium_with_fault():
    ds, db = derivatives(
        PlantState.zero(), ZERO3, ZERO3, NetworkParams(), BASE, fault_active=True
    )
    for group in (ds.i_filter, ds.v_pcc, ds.i_line, db):
        assert group == (0.0, 0.0, 0.0)


def test_dc_decay_rate_of_filter_current():
    params = NetworkParams(r_filter_parasitic=0.01)
    state = PlantState(ThreePhaseSample(1.0, 0.0, 0.0), ZERO3, ZERO3)
    ds, _ = derivatives(state, ZERO3, ZERO3, params, BASE)
    want = -0.01 * 1.0 * BASE.omega_nominal / params.x_filter_l
    assert ds.i_filter.a == pytest.approx(want, rel=1e-12)
    assert ds.i_filter.b == 0.0


def test_strong_grid_voltage_anchor_and_periodicity():
    v0 = strong_grid_voltage(0.0, BASE)
    assert v0.a == pytest.approx(1.0, abs=1e-12)
    v1 = strong_grid_voltage(1.0 / BASE.f_nominal, BASE)
    for x, y in zip(v0, v1):
        assert x == pytest.approx(y, abs=1e-9)


def test_strong_grid_voltage_constant_in_grid_frame():
    for t in np.linspace(0.0, 0.04, 37):
        d, q = abc_to_dq(strong_grid_voltage(t, BASE), BASE.omega_nominal * t)
        assert d == pytest.approx(math.sqrt(1.5), abs=1e-12)
        assert q == pytest.approx(0.0, abs=1e-12)


def test_step_zero_state_zero_inputs():
    s, b = step(PlantState.zero(), 0.0, 2e-6, ZERO3, NetworkParams(), BASE, v_sg=ZERO3)
    assert b is None
    assert s == PlantState.zero()


def test_step_rejects_oversized_dt():
    with pytest.raises(ValueError):
        step(PlantState.zero(), 0.0, 1e-5, ZERO3, NetworkParams(), BASE)


def test_step_detects_divergence():
    # 200 pu command slams the filter current over the trusted region
    s = PlantState(ThreePhaseSample(99.9, 0, 0), ZERO3, ZERO3)
    with pytest.raises(PlantDiverged):
        for k in range(100):
            s, _ = step(s, k * 5e-6, 5e-6, ThreePhaseSample(200.0, 0, 0), NetworkParams(), BASE)


def test_step_deterministic():
    params = NetworkParams()
    state = PlantState(ThreePhaseSample(0.5, -0.2, -0.3), ThreePhaseSample(1.0, -0.5, -0.5), ZERO3)
    u = ThreePhaseSample(1.1, -0.55, -0.55)
    a1, _ = step(state, 0.0, 2e-6, u, params, BASE)
    a2, _ = step(state, 0.0, 2e-6, u, params, BASE)
    assert a1 == a2


def test_step_matches_engine_span():
    params = NetworkParams()
    state = PlantState(
        ThreePhaseSample(0.4, -0.1, -0.3),
        ThreePhaseSample(0.9, -0.45, -0.45),
        ThreePhaseSample(0.3, -0.2, -0.1),
    )
    u = ThreePhaseSample(1.2, -0.6, -0.6)
    py_state, _ = step(state, 0.0, 2e-6, u, params, BASE)

    x = np.zeros(engine.STATE_SIZE)
    x[:9] = state.as_array()
    pvec = engine.pack_params(params, BASE, 0.0)
    diverged = engine.integrate_span(
        x, 0, 1, 2e-6, u.a, u.b, u.c, pvec, -1, engine.new_fault_phase(), engine.new_scratch()
    )
    assert diverged == 0
    assert np.allclose(py_state.as_array(), x[:9], rtol=0, atol=1e-14)


def test_passivity_without_sources():
    params = NetworkParams(r_filter_parasitic=0.01)
    state = PlantState(
        ThreePhaseSample(0.5, -0.25, -0.25),
        ThreePhaseSample(0.8, -0.4, -0.4),
        ThreePhaseSample(-0.2, 0.1, 0.1),
    )
    energy = stored_energy(state, params, BASE)
    for k in range(2000):
        state, _ = step(state, k * 2e-6, 2e-6, ZERO3, params, BASE, v_sg=ZERO3)
        e_next = stored_energy(state, params, BASE)
        assert e_next <= energy * (1.0 + 1e-12)
        energy = e_next


def test_fault_collapses_pcc_voltage(case_a_runs):
    trace, _ = case_a_runs["pcc"]
    # two cycles into the ten-cycle window the bus should be far below 0.2 pu
    sel = (trace.t >= 1.04) & (trace.t < 1.2)
    vmag = np.hypot(trace.v_d[sel], trace.v_q[sel]) / math.sqrt(1.5)
    assert vmag.max() < 0.2


def test_open_loop_step_size_convergence():
    params = NetworkParams()
    ctrl = ControlParams()
    op = solve_operating_point(params, ctrl, BASE)
    u_dq = DqVector(op.u_vsc.real, op.u_vsc.imag)

    def run_open_loop(dt, t_end=0.01):
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
        n = int(round(t_end / dt))
        m = int(round(5e-5 / dt))
        for j in range(n // m):
            t = j * m * dt
            u = dq_to_abc(u_dq, BASE.omega_nominal * t)
            engine.integrate_span(
                x, j * m, m, dt, u.a, u.b, u.c, pvec, -1, engine.new_fault_phase(), scratch
            )
        return x[:9].copy()

    ref = run_open_loop(2.5e-7)
    err1 = np.abs(run_open_loop(2e-6) - ref).max()
    err2 = np.abs(run_open_loop(1e-6) - ref).max()
    ratio = err1 / err2
    assert 10.0 < ratio < 30.0  # fourth-order self-convergence


def test_energy_audit_closes():
    params = NetworkParams()
    ctrl = ControlParams()
    op = solve_operating_point(params, ctrl, BASE)
    u_dq = DqVector(op.u_vsc.real, op.u_vsc.imag)
    dt = 2e-6
    n = int(round(0.02 / dt))  # one nominal cycle

    state = PlantState(
        ThreePhaseSample(*dq_to_abc(DqVector(op.i_filter.real, op.i_filter.imag), 0.0)),
        ThreePhaseSample(*dq_to_abc(DqVector(op.v_pcc.real, op.v_pcc.imag), 0.0)),
        ThreePhaseSample(*dq_to_abc(DqVector(op.i_line.real, op.i_line.imag), 0.0)),
    )
    t = np.empty(n + 1)
    states = np.empty((n + 1, 9))
    u_log = np.empty((n + 1, 3))
    t[0] = 0.0
    states[0] = state.as_array()
    u_log[0] = dq_to_abc(u_dq, 0.0)
    for k in range(n):
        u = dq_to_abc(u_dq, BASE.omega_nominal * (k * dt))
        state, _ = step(state, k * dt, dt, u, params, BASE)
        t[k + 1] = (k + 1) * dt
        states[k + 1] = state.as_array()
        u_log[k + 1] = u

    audit = power_audit(t, states, u_log, params, BASE)
    assert audit["residual_rel"] < 1e-3
    assert audit["e_vsc_in"] > 0.0
    assert audit["p_load_grid_bus"] == pytest.approx(6.0)
