"""Hot inner loop: flat-array RK4 spans between controller ticks.

All scheduling runs on integer plant-step indices so switching instants are
the same physical times regardless of the step size.  The three fault shunts
close together at step ``k_on`` (exact step index); they are opened by the
scenario runner between spans, at controller-tick boundaries, when each
phase's shunt current has crossed zero, the way an arc extinguishes.  Tying
the opening decision to the tick grid keeps the event time independent of
the plant step size, which preserves clean step-halving convergence.

State vector layout (12 floats):

    0..2   filter inductor currents a/b/c
    3..5   PCC (filter capacitor) voltages a/b/c
    6..8   line current a/b/c; converter-side branch while that phase faults
    9..11  grid-side branch current while that phase faults, else zero

Compiled with numba when available; the pure-Python fallback is identical but
roughly two orders of magnitude slower.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit as _numba_njit

    def _njit(func):
        return _numba_njit(cache=True)(func)

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    def _njit(func):
        return func

    HAVE_NUMBA = False

from .frames import PerUnitBase
from .plant import NetworkParams

_SQRT3_2 = math.sqrt(3.0) / 2.0

# parameter-vector slots
P_OMEGA = 0
P_INV_LF = 1
P_R_PAR = 2
P_INV_CF = 3
P_INV_LL = 4
P_R_LINE = 5
P_INV_LA = 6
P_R_A = 7
P_INV_LB = 8
P_R_B = 9
P_R_FAULT = 10
P_MERGE_WA = 11
P_MERGE_WB = 12
N_PARAMS = 13

STATE_SIZE = 12


def pack_params(params: NetworkParams, base: PerUnitBase, fault_location: float) -> np.ndarray:
    """Flatten network constants (with precomputed inverses) for the stepper."""
    w = base.omega_nominal
    p = np.zeros(N_PARAMS)
    p[P_OMEGA] = w
    p[P_INV_LF] = w / params.x_filter_l
    p[P_R_PAR] = params.r_filter_parasitic
    p[P_INV_CF] = w * abs(params.x_filter_c)
    p[P_INV_LL] = w / (params.x_transformer + params.x_line)
    p[P_R_LINE] = params.r_line
    loc = min(fault_location, 1.0 - 1e-12)
    l_a = (params.x_transformer + loc * params.x_line) / w
    l_b = (1.0 - loc) * params.x_line / w
    p[P_INV_LA] = 1.0 / l_a
    p[P_R_A] = loc * params.r_line
    p[P_INV_LB] = 1.0 / l_b
    p[P_R_B] = (1.0 - loc) * params.r_line
    p[P_R_FAULT] = params.r_fault
    p[P_MERGE_WA] = l_a / (l_a + l_b)
    p[P_MERGE_WB] = l_b / (l_a + l_b)
    return p


@_njit
def _rhs(x, dx, t, ua, ub, uc, p, fa, fb, fc):
    w = p[P_OMEGA]
    th = w * t
    cs = math.cos(th)
    sn = math.sin(th)
    ea = cs
    eb = -0.5 * cs + _SQRT3_2 * sn
    ec = -0.5 * cs - _SQRT3_2 * sn

    inv_lf = p[P_INV_LF]
    r_par = p[P_R_PAR]
    inv_cf = p[P_INV_CF]

    dx[0] = (ua - x[3] - r_par * x[0]) * inv_lf
    dx[1] = (ub - x[4] - r_par * x[1]) * inv_lf
    dx[2] = (uc - x[5] - r_par * x[2]) * inv_lf

    dx[3] = (x[0] - x[6]) * inv_cf
    dx[4] = (x[1] - x[7]) * inv_cf
    dx[5] = (x[2] - x[8]) * inv_cf

    rf = p[P_R_FAULT]
    inv_la = p[P_INV_LA]
    r_a = p[P_R_A]
    inv_lb = p[P_INV_LB]
    r_b = p[P_R_B]
    inv_ll = p[P_INV_LL]
    r_l = p[P_R_LINE]

    if fa:
        vf = rf * (x[6] - x[9])
        dx[6] = (x[3] - vf - r_a * x[6]) * inv_la
        dx[9] = (vf - ea - r_b * x[9]) * inv_lb
    else:
        dx[6] = (x[3] - ea - r_l * x[6]) * inv_ll
        dx[9] = 0.0
    if fb:
        vf = rf * (x[7] - x[10])
        dx[7] = (x[4] - vf - r_a * x[7]) * inv_la
        dx[10] = (vf - eb - r_b * x[10]) * inv_lb
    else:
        dx[7] = (x[4] - eb - r_l * x[7]) * inv_ll
        dx[10] = 0.0
    if fc:
        vf = rf * (x[8] - x[11])
        dx[8] = (x[5] - vf - r_a * x[8]) * inv_la
        dx[11] = (vf - ec - r_b * x[11]) * inv_lb
    else:
        dx[8] = (x[5] - ec - r_l * x[8]) * inv_ll
        dx[11] = 0.0


@_njit
def integrate_span(x, k_start, n_steps, dt, ua, ub, uc, p, k_on, fault_phase, scratch):
    """Advance ``n_steps`` RK4 steps from plant-step index ``k_start``.

    ``fault_phase`` (int64[3]) holds the per-phase shunt states (1 = closed);
    fault inception at step ``k_on`` closes all three and energizes the
    grid-side branch continuously.  Returns 1 if any state left the trusted
    region (checked at span end so NaN propagation is caught), else 0.
    """
    k1 = scratch[0]
    k2 = scratch[1]
    k3 = scratch[2]
    k4 = scratch[3]
    xt = scratch[4]

    for i in range(n_steps):
        k = k_start + i
        if k == k_on:
            for ph in range(3):
                x[9 + ph] = x[6 + ph]
                fault_phase[ph] = 1
        fa = fault_phase[0] != 0
        fb = fault_phase[1] != 0
        fc = fault_phase[2] != 0
        t = k * dt

        _rhs(x, k1, t, ua, ub, uc, p, fa, fb, fc)
        for j in range(STATE_SIZE):
            xt[j] = x[j] + 0.5 * dt * k1[j]
        _rhs(xt, k2, t + 0.5 * dt, ua, ub, uc, p, fa, fb, fc)
        for j in range(STATE_SIZE):
            xt[j] = x[j] + 0.5 * dt * k2[j]
        _rhs(xt, k3, t + 0.5 * dt, ua, ub, uc, p, fa, fb, fc)
        for j in range(STATE_SIZE):
            xt[j] = x[j] + dt * k3[j]
        _rhs(xt, k4, t + dt, ua, ub, uc, p, fa, fb, fc)
        sixth = dt / 6.0
        for j in range(STATE_SIZE):
            x[j] += sixth * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])

    for j in range(STATE_SIZE):
        if not (abs(x[j]) <= 100.0):
            return 1
    return 0


def open_cleared_phases(x: np.ndarray, p: np.ndarray, fault_phase: np.ndarray, prev_shunt: np.ndarray) -> None:
    """Open armed shunts whose current crossed zero since the last tick.

    Called between spans once the fault window has elapsed.  The merged line
    current conserves the flux of the two series branches; at a current zero
    the branch currents agree, so the merge is continuous.
    """
    for ph in range(3):
        if fault_phase[ph] != 0:
            i_shunt = x[6 + ph] - x[9 + ph]
            if i_shunt == 0.0 or (i_shunt > 0.0) != (prev_shunt[ph] > 0.0):
                x[6 + ph] = p[P_MERGE_WA] * x[6 + ph] + p[P_MERGE_WB] * x[9 + ph]
                x[9 + ph] = 0.0
                fault_phase[ph] = 0
            else:
                prev_shunt[ph] = i_shunt


def new_scratch() -> np.ndarray:
    return np.empty((5, STATE_SIZE))


def new_fault_phase() -> np.ndarray:
    return np.zeros(3, dtype=np.int64)
