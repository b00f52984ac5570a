"""Model Hamiltonian of two coupled, driven transmons plus learned corrections.

All frequencies are angular, in rad/ns, so with hbar = 1 time is in ns.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from . import operators as ops
from .errors import InvalidDimensionError, InvalidInputError
from .pulses import DEFAULT_DT_NS, envelope

TERMS = ("M", "D1", "D2")

# defaults chosen so the state norm stays within 1e-8 over the longest pulses
DEFAULT_FRAME = "rotating"
DEFAULT_REL_TOL = 1e-9
DEFAULT_ABS_TOL = 1e-11


@dataclass(frozen=True)
class DeviceParams:
    omega1: float
    omega2: float
    delta1: float
    delta2: float
    j12: float
    Omega1: float
    Omega2: float
    levels: int = 3
    dt_ns: float = DEFAULT_DT_NS

    def __post_init__(self):
        if int(self.levels) != self.levels or self.levels < 2:
            raise InvalidDimensionError(f"levels must be >= 2, got {self.levels}")
        values = [self.omega1, self.omega2, self.delta1, self.delta2, self.j12,
                  self.Omega1, self.Omega2]
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("device frequencies must be finite")
        if not self.dt_ns > 0:
            raise InvalidInputError("dt_ns must be positive")

    @property
    def dim(self):
        return self.levels * self.levels


@dataclass(frozen=True, eq=False)
class CorrectionSet:
    """Hermitian, zero-diagonal corrections M (static), D1 and D2 (drive-modulated).

    ``active`` masks which of the three terms enter the Hamiltonian.
    ``modulation_freq`` is the angular frequency of the cosine that multiplies
    both dynamic terms; ``None`` means "use omega2 of the device".
    """

    M: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    active: tuple = (True, True, True)
    modulation_freq: float = None

    def __post_init__(self):
        shapes = {self.M.shape, self.D1.shape, self.D2.shape}
        if len(shapes) != 1:
            raise InvalidDimensionError(f"correction matrices disagree in shape: {shapes}")
        (shape,) = shapes
        if len(shape) != 2 or shape[0] != shape[1]:
            raise InvalidDimensionError(f"correction matrices must be square, got {shape}")
        if len(self.active) != 3:
            raise InvalidInputError("active must hold three flags (M, D1, D2)")

    @classmethod
    def zeros(cls, dim, active=(True, True, True), modulation_freq=None):
        z = np.zeros((dim, dim), dtype=complex)
        return cls(z, z.copy(), z.copy(), tuple(active), modulation_freq)

    @property
    def dim(self):
        return self.M.shape[0]

    @property
    def matrices(self):
        return {"M": self.M, "D1": self.D1, "D2": self.D2}

    def effective(self, name):
        """The matrix as it enters the Hamiltonian (zero when inactive)."""
        i = TERMS.index(name)
        m = self.matrices[name]
        return m if self.active[i] else np.zeros_like(m)

    def modulation(self, params):
        return params.omega2 if self.modulation_freq is None else self.modulation_freq

    def with_modulation(self, freq):
        return replace(self, modulation_freq=freq)


def static_hamiltonian(params):
    """Static part: bare transmon ladders plus the exchange coupling."""
    d = params.levels
    a = ops.ladder(d)
    n = ops.number(d)
    eye = np.eye(d)
    a1, a2 = ops.embed(a, ops.FIRST, d), ops.embed(a, ops.SECOND, d)
    h = np.zeros((d * d, d * d), dtype=complex)
    for omega, delta, pos in ((params.omega1, params.delta1, ops.FIRST),
                              (params.omega2, params.delta2, ops.SECOND)):
        h += ops.embed(omega * n + (delta / 2) * n @ (n - eye), pos, d)
    h += params.j12 * (a1.conj().T @ a2 + a1 @ a2.conj().T)
    return h


def x_quadratures(levels):
    """Embedded ``a + a^dagger`` for each transmon."""
    a = ops.ladder(levels)
    x = a + a.conj().T
    return ops.embed(x, ops.FIRST, levels), ops.embed(x, ops.SECOND, levels)


def drive_coefficients(params, schedule, t):
    """Scalar prefactors ``Omega_i S_i(t) cos(w_di t)`` of the two X quadratures."""
    s1 = envelope(schedule.pulse_q1, t, schedule.dt_ns)
    s2 = envelope(schedule.pulse_q2, t, schedule.dt_ns)
    return (params.Omega1 * s1 * np.cos(schedule.drive_freq_q1 * t),
            params.Omega2 * s2 * np.cos(schedule.drive_freq_q2 * t))


def drive_term(params, schedule, t):
    x1, x2 = x_quadratures(params.levels)
    c1, c2 = drive_coefficients(params, schedule, t)
    return c1 * x1 + c2 * x2


def correction_term(params, corrections, schedule, t):
    if corrections.dim != params.dim:
        raise InvalidDimensionError(
            f"corrections are {corrections.dim}x{corrections.dim}, model needs {params.dim}"
        )
    carrier = np.cos(corrections.modulation(params) * t)
    s1 = envelope(schedule.pulse_q1, t, schedule.dt_ns)
    s2 = envelope(schedule.pulse_q2, t, schedule.dt_ns)
    return (corrections.effective("M")
            + s1 * carrier * corrections.effective("D1")
            + s2 * carrier * corrections.effective("D2"))


def total_hamiltonian(params, corrections, schedule, t):
    """Full Hamiltonian at time ``t``: model terms plus the active corrections."""
    return (static_hamiltonian(params) + drive_term(params, schedule, t)
            + correction_term(params, corrections, schedule, t))


def effective_cr_coefficients(delta, Omega, j12):
    """Rates multiplying ZI/2 and ZX/2 in the effective cross-resonance model.

    ``delta`` is the qubit detuning, ``Omega`` the drive strength in the
    co-rotating frame. With ``delta = Omega = 0`` the ZX rate is taken as 0.
    """
    root = np.hypot(delta, Omega)
    zi = delta - root
    zx = 0.0 if root == 0 else -j12 * Omega / root
    return float(zi), float(zx)


@dataclass(frozen=True, eq=False)
class ModelContext:
    """Pre-embedded operators and integration settings for one device.

    Immutable; safe to share between concurrent integrations.
    """

    params: DeviceParams
    frame: str = DEFAULT_FRAME
    rel_tol: float = DEFAULT_REL_TOL
    abs_tol: float = DEFAULT_ABS_TOL
    h_static: np.ndarray = field(init=False, repr=False)
    x1: np.ndarray = field(init=False, repr=False)
    x2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.frame not in ("lab", "rotating"):
            raise InvalidInputError(f"frame must be 'lab' or 'rotating', got {self.frame!r}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise InvalidInputError("tolerances must be positive")
        h0 = static_hamiltonian(self.params)
        x1, x2 = x_quadratures(self.params.levels)
        for name, value in (("h_static", h0), ("x1", x1), ("x2", x2)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def dim(self):
        return self.params.dim

    @property
    def frame_energies(self):
        """Diagonal removed by the rotating frame (zeros in the lab frame)."""
        if self.frame == "rotating":
            return np.real(np.diag(self.h_static)).copy()
        return np.zeros(self.dim)

    def with_tolerances(self, rel_tol, abs_tol=None):
        return ModelContext(self.params, self.frame, rel_tol,
                            self.abs_tol if abs_tol is None else abs_tol)
