"""Gaussian-square drive envelopes and per-qubit drive schedules.

Edges use a lifted Gaussian, so the envelope is exactly zero at the pulse
boundaries and exactly equal to the amplitude where the edge meets the plateau.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

DEFAULT_DT_NS = 0.22222222
DEFAULT_RISEFALL_DT = 32
DEFAULT_SIGMA_DT = 8.0


@dataclass(frozen=True)
class GaussianSquarePulse:
    amplitude: float
    total_duration_dt: int
    risefall_dt: int = DEFAULT_RISEFALL_DT
    sigma_dt: float = DEFAULT_SIGMA_DT

    def __post_init__(self):
        if self.total_duration_dt <= 0:
            raise InvalidInputError("total_duration_dt must be positive")
        if self.risefall_dt < 0 or 2 * self.risefall_dt > self.total_duration_dt:
            raise InvalidInputError(
                f"need 0 <= 2*risefall_dt <= total_duration_dt, got risefall_dt="
                f"{self.risefall_dt}, total_duration_dt={self.total_duration_dt}"
            )
        if self.sigma_dt <= 0:
            raise InvalidInputError("sigma_dt must be positive")

    @classmethod
    def gaussian(cls, amplitude, total_duration_dt):
        """Pure Gaussian: two edges and no plateau, sigma a quarter of the duration."""
        return cls(amplitude, total_duration_dt, total_duration_dt / 2, total_duration_dt / 4)

    def duration_ns(self, dt_ns):
        return self.total_duration_dt * dt_ns


@dataclass(frozen=True)
class PulseSchedule:
    """Two simultaneous pulses sharing one measurement time."""

    pulse_q1: GaussianSquarePulse
    pulse_q2: GaussianSquarePulse
    drive_freq_q1: float
    drive_freq_q2: float
    dt_ns: float = DEFAULT_DT_NS

    def __post_init__(self):
        if self.pulse_q1.total_duration_dt != self.pulse_q2.total_duration_dt:
            raise InvalidInputError("both pulses must share total_duration_dt")
        if not self.dt_ns > 0:
            raise InvalidInputError("dt_ns must be positive")

    @property
    def duration_ns(self):
        return self.pulse_q1.total_duration_dt * self.dt_ns

    def edge_times(self):
        """Times (ns) where the envelope changes functional form."""
        times = {0.0, self.duration_ns}
        for p in (self.pulse_q1, self.pulse_q2):
            r = p.risefall_dt * self.dt_ns
            times.update((r, self.duration_ns - r))
        return sorted(times)


def envelope_values(t, amplitude, total_ns, risefall_ns, sigma_ns):
    """Vectorised envelope; all arguments broadcast against each other."""
    t = np.asarray(t, dtype=float)
    amplitude = np.asarray(amplitude, dtype=float)
    total_ns = np.asarray(total_ns, dtype=float)
    r = np.asarray(risefall_ns, dtype=float)
    sigma = np.asarray(sigma_ns, dtype=float)

    # distance into the edge, measured back from the plateau join
    dist = np.maximum(np.maximum(r - t, r - (total_ns - t)), 0.0)
    floor = np.exp(-(r * r) / (2 * sigma * sigma))
    with np.errstate(invalid="ignore", divide="ignore"):
        lifted = (np.exp(-(dist * dist) / (2 * sigma * sigma)) - floor) / (1 - floor)
    shape = np.where(dist > 0, lifted, 1.0)
    inside = (t >= 0) & (t <= total_ns)
    return np.where(inside, amplitude * shape, 0.0)


def envelope(pulse, t, dt_ns=DEFAULT_DT_NS):
    """Envelope S(t) of ``pulse`` at time ``t`` (ns); zero outside [0, T]."""
    return float(
        envelope_values(
            t,
            pulse.amplitude,
            pulse.total_duration_dt * dt_ns,
            pulse.risefall_dt * dt_ns,
            pulse.sigma_dt * dt_ns,
        )
    )


def duration_ladder(count, base_dt=320, step_dt=128, edges_dt=2 * DEFAULT_RISEFALL_DT):
    """Total durations ``base + k*step + edges`` for ``k = 0..count-1``."""
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    return [base_dt + k * step_dt + edges_dt for k in range(count)]
