"""Synchronization-source selection, the timestamped angle channel and the
communication-delay compensation.

In remote synchronization the PLL runs next to the strong-grid measurement
and only its angle travels over the channel, stamped with origin-side time.
The channel models a fixed, known delay: the receiver at time t consumes the
sample stamped exactly t - delay, so producer and consumer must share one
tick grid.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass
from enum import Enum

from .frames import PerUnitBase, ThreePhaseSample, wrap_angle

# stamp matching slack; tick times are exact float products so any mismatch
# beyond rounding noise is a scheduling bug
STAMP_TOL = 1e-9


class SyncMode(Enum):
    PCC = "pcc"
    STRONG_GRID = "sg"


class ChannelUnderrun(RuntimeError):
    """The sample for the requested stamp was never produced."""


@dataclass(frozen=True)
class TimestampedAngle:
    stamp: float
    angle: float


class DelayChannel:
    """Single-producer / single-consumer ordered buffer with a fixed delay."""

    def __init__(self, delay: float):
        if delay < 0.0:
            raise ValueError("delay must be non-negative")
        self.delay = delay
        self._buf: deque[TimestampedAngle] = deque()
        self._last_stamp: float | None = None

    def push(self, stamp: float, angle: float) -> None:
        if self._last_stamp is not None and stamp <= self._last_stamp:
            raise ValueError("stamps must be strictly increasing")
        self._last_stamp = stamp
        self._buf.append(TimestampedAngle(stamp, angle))

    def pop(self, t_receiver: float) -> float:
        """Angle stamped exactly ``t_receiver - delay``; prunes older samples."""
        want = t_receiver - self.delay
        buf = self._buf
        while buf and buf[0].stamp < want - STAMP_TOL:
            buf.popleft()
        if not buf or abs(buf[0].stamp - want) > STAMP_TOL:
            raise ChannelUnderrun(
                f"no sample stamped {want!r} (delay {self.delay}, receiver t {t_receiver})"
            )
        return buf[0].angle

    def __len__(self) -> int:
        return len(self._buf)


def select_sync_voltage(
    mode: SyncMode, v_pcc: ThreePhaseSample, v_sg: ThreePhaseSample
) -> ThreePhaseSample:
    """The voltage the PLL locks to under the given mode."""
    return v_pcc if mode is SyncMode.PCC else v_sg


def compensate_angle(phi_tau: float, tau: float, base: PerUnitBase) -> float:
    """Reconstruct the present angle from a delayed sample.

    Adds the phase the source accumulated over the delay at nominal
    frequency; exact whenever the source runs at exactly nominal.  Delays of
    a full cycle or more are accepted (timestamps disambiguate whole cycles)
    but flagged, since the phase alone could not.
    """
    if tau < 0.0:
        raise ValueError("tau must be non-negative")
    if tau >= 1.0 / base.f_nominal:
        warnings.warn(
            "delay reaches a full nominal cycle; compensation relies on timestamps",
            stacklevel=2,
        )
    return wrap_angle(phi_tau + tau * base.omega_nominal)
