"""Per-unit base, angle helpers and power-invariant reference-frame transforms.

Conventions used by the whole package:

* abc -> dq is the power-invariant (sqrt(2/3)-scaled) projection.  A balanced
  set a = A*cos(w*t), b = A*cos(w*t - 2pi/3), c = A*cos(w*t + 2pi/3)
  transformed with theta = w*t gives (d, q) = (sqrt(3/2)*A, 0).  Zero
  sequence is discarded (balanced networks only).
* Powers computed from dq pairs need no 3/2 correction:
  p = vd*id + vq*iq and q = vd*iq - vq*id.  The sign of q is normative for
  the package: with it the current-reference rule in the controller returns
  exactly the commanded (p, q) when substituted back.
* Angles are plain floats in radians; producers wrap them to [0, 2*pi) with
  :func:`wrap_angle`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

TAU = 2.0 * math.pi

# dq magnitude of a balanced set with 1.0 pu peak phase amplitude
DQ_PER_PEAK = math.sqrt(1.5)

_SQRT23 = math.sqrt(2.0 / 3.0)
_SQRT3_2 = math.sqrt(3.0) / 2.0


class ThreePhaseSample(NamedTuple):
    """Instantaneous a/b/c values in per-unit (voltage or current by context)."""

    a: float
    b: float
    c: float


class DqVector(NamedTuple):
    """Two-axis synchronous-frame quantity in per-unit."""

    d: float
    q: float


def wrap_angle(theta: float) -> float:
    """Wrap an angle in radians to [0, 2*pi)."""
    r = theta % TAU
    # a tiny negative operand can make the modulo round up to the modulus
    if r >= TAU:
        return 0.0
    return r


@dataclass(frozen=True)
class PerUnitBase:
    """System base quantities.

    Voltages are line-to-line RMS in volts; the transformer turns ratio is
    absorbed by keeping separate bases for the strong-grid and VSC sides, so
    per-unit values never need explicit ratio corrections.
    """

    v_base_sg: float
    v_base_vsc: float
    s_base: float
    f_nominal: float
    omega_nominal: float

    def __post_init__(self):
        for name in ("v_base_sg", "v_base_vsc", "s_base", "f_nominal", "omega_nominal"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"base quantity {name} must be positive")
        expected = TAU * self.f_nominal
        if abs(self.omega_nominal - expected) > 1e-9 * expected:
            raise ValueError(
                f"omega_nominal {self.omega_nominal} inconsistent with "
                f"2*pi*f_nominal = {expected}"
            )


def nominal_base(f_nominal: float = 50.0,
                 v_base_sg: float = 11e3,
                 v_base_vsc: float = 3.3e3,
                 s_base: float = 5e6) -> PerUnitBase:
    """Base with omega derived from the frequency."""
    return PerUnitBase(v_base_sg, v_base_vsc, s_base, f_nominal, TAU * f_nominal)


def abc_to_dq(x: ThreePhaseSample, theta: float) -> DqVector:
    """Power-invariant projection of a three-phase sample onto axes at ``theta``.

    Zero sequence is discarded.
    """
    ct = math.cos(theta)
    st = math.sin(theta)
    cb = -0.5 * ct + _SQRT3_2 * st  # cos(theta - 2pi/3)
    cc = -0.5 * ct - _SQRT3_2 * st  # cos(theta + 2pi/3)
    sb = -0.5 * st - _SQRT3_2 * ct  # sin(theta - 2pi/3)
    sc = -0.5 * st + _SQRT3_2 * ct  # sin(theta + 2pi/3)
    d = _SQRT23 * (x.a * ct + x.b * cb + x.c * cc)
    q = -_SQRT23 * (x.a * st + x.b * sb + x.c * sc)
    return DqVector(d, q)


def dq_to_abc(x: DqVector, theta: float) -> ThreePhaseSample:
    """Inverse of :func:`abc_to_dq` on zero-sequence-free signals."""
    ct = math.cos(theta)
    st = math.sin(theta)
    cb = -0.5 * ct + _SQRT3_2 * st
    cc = -0.5 * ct - _SQRT3_2 * st
    sb = -0.5 * st - _SQRT3_2 * ct
    sc = -0.5 * st + _SQRT3_2 * ct
    a = _SQRT23 * (x.d * ct - x.q * st)
    b = _SQRT23 * (x.d * cb - x.q * sb)
    c = _SQRT23 * (x.d * cc - x.q * sc)
    return ThreePhaseSample(a, b, c)


def rotate_frame(x: DqVector, delta: float) -> DqVector:
    """Rotate a dq vector into a frame displaced by ``delta`` (norm preserving)."""
    cd = math.cos(delta)
    sd = math.sin(delta)
    return DqVector(cd * x.d - sd * x.q, sd * x.d + cd * x.q)


def instantaneous_power(v: DqVector, i: DqVector) -> tuple[float, float]:
    """(p, q) from voltage and current expressed in the same frame."""
    p = v.d * i.d + v.q * i.q
    q = v.d * i.q - v.q * i.d
    return p, q


def balanced_abc(amplitude: float, angle: float) -> ThreePhaseSample:
    """Balanced cosine set with the given peak amplitude and phase-a angle."""
    return dq_to_abc(DqVector(DQ_PER_PEAK * amplitude, 0.0), angle)


__all__ = [
    "TAU",
    "DQ_PER_PEAK",
    "ThreePhaseSample",
    "DqVector",
    "PerUnitBase",
    "nominal_base",
    "wrap_angle",
    "abc_to_dq",
    "dq_to_abc",
    "rotate_frame",
    "instantaneous_power",
    "balanced_abc",
]
