"""Time-dependent Schrodinger integration for batches of drive schedules.

A batch is a set of independent state vectors stored as the columns of a
``(dim, B)`` array. Every column has its own pulse envelopes and end time but
all columns advance on one shared adaptive time mesh, which keeps the Python
overhead per step independent of the batch size.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import operators as ops
from .errors import (InvalidDimensionError, InvalidInputError,
                     NumericalBlowupError, StiffnessError)
from .hamiltonian import DEFAULT_ABS_TOL, DEFAULT_FRAME, DEFAULT_REL_TOL, TERMS, ModelContext
from .pulses import envelope_values

# Dormand-Prince 5(4)
RK_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
RK_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
RK_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
RK_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension: y(t + th*h) = y + h * sum_j th^(j+1) * (P^T K)_j
RK_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

DENSE_STORAGE_LIMIT = 100_000
_SAFE, _BETA, _EXPO = 0.9, 0.04, 0.2 - 0.04 * 0.75
_FAC_MIN, _FAC_MAX = 0.2, 10.0


def dense_powers(theta):
    theta = np.asarray(theta, dtype=float)
    return np.stack([theta, theta**2, theta**3, theta**4], axis=-1)


@dataclass
class Trajectory:
    """Accepted steps of a forward solve, kept for the backward (adjoint) pass.

    ``dense[n]`` holds the continuous-extension coefficients of step ``n`` or
    ``None`` once more than ``DENSE_STORAGE_LIMIT`` steps were stored; those
    steps are recomputed from ``states[n]`` on demand.
    """

    times: list
    states: list
    dense: list
    t_mid: list

    @property
    def n_steps(self):
        return len(self.states)

    def step(self, n):
        return self.times[n], self.times[n + 1] - self.times[n]


@dataclass
class SolveStats:
    accepted: int = 0
    rejected: int = 0
    rhs_evals: int = 0

    def as_dict(self):
        return {"accepted": self.accepted, "rejected": self.rejected,
                "rhs_evals": self.rhs_evals}


def _rms_columns(err, y, y_new, rel_tol, abs_tol):
    scale = abs_tol + rel_tol * np.maximum(np.abs(y), np.abs(y_new))
    with np.errstate(invalid="ignore", over="ignore"):
        return np.sqrt(np.mean(np.abs(err / scale) ** 2, axis=0))


def _rk_step(rhs, t, y, h, k1, t_mid):
    """One Dormand-Prince step; returns (y_new, K, err)."""
    K = [k1]
    for i in range(1, 7):
        dy = RK_A[i][0] * K[0]
        for j in range(1, i):
            if RK_A[i][j] != 0.0:
                dy = dy + RK_A[i][j] * K[j]
        yi = y + h * dy
        K.append(rhs(t + RK_C[i] * h, yi, t_mid))
    # row 6 of A equals B, so the sixth stage state is the new solution
    y_new = yi
    err = h * sum(RK_E[i] * K[i] for i in range(7) if RK_E[i] != 0.0)
    return y_new, K, err


def dense_coefficients(K):
    return np.tensordot(RK_P.T, np.stack(K), axes=(1, 0))


def integrate(rhs, y0, column_end, stops, rel_tol, abs_tol, h_max=np.inf,
              record=False, max_steps=5_000_000):
    """Adaptive Dormand-Prince 5(4) integration of ``dy/dt = rhs(t, y, t_mid)``.

    ``y0`` is ``(dim, B)``; column ``b`` is integrated on ``[0, column_end[b]]``
    and returned at its own end time. The mesh lands exactly on every time in
    ``stops`` (which must include the column end times), and columns are frozen
    to zero once finished. ``t_mid`` is the midpoint of the current step, so a
    piecewise-defined right-hand side can resolve which piece a step lies in.

    Returns ``(y_end, stats, trajectory)``; ``trajectory`` is ``None`` unless
    ``record`` is set.
    """
    y = np.array(y0, dtype=complex)
    if y.ndim != 2:
        raise InvalidDimensionError("state batch must be (dim, B)")
    column_end = np.asarray(column_end, dtype=float)
    stops = np.unique(np.asarray(stops, dtype=float))
    stops = stops[stops > 0]
    t_final = stops[-1] if len(stops) else 0.0
    if len(stops) and not np.all(np.isin(column_end, stops)):
        raise InvalidInputError("column end times must be part of the stop list")

    y_end = np.zeros_like(y)
    stats = SolveStats()
    traj = Trajectory([0.0], [], [], []) if record else None
    active = column_end > 0
    y_end[:, ~active] = y[:, ~active]

    t = 0.0
    stop_idx = 0
    if t_final == 0.0:
        return y_end, stats, traj

    f0 = rhs(t, y, 0.5 * stops[0])
    stats.rhs_evals += 1
    h = _initial_step(y, f0, rel_tol, abs_tol, min(h_max, stops[0]))
    k1 = f0
    fac_old = 1e-4
    while stop_idx < len(stops):
        if stats.accepted + stats.rejected > max_steps:
            raise StiffnessError(f"exceeded {max_steps} steps at t={t:.6g} ns", t)
        next_stop = stops[stop_idx]
        h = min(h, h_max)
        hit_stop = t + h >= next_stop * (1 - 1e-13)
        t_new = next_stop if hit_stop else t + h
        h_used = t_new - t
        if h_used <= 1e-12 * max(1.0, abs(t)):
            raise StiffnessError(f"step size underflow at t={t:.6g} ns", t)
        t_mid = t + 0.5 * h_used
        y_new, K, err = _rk_step(rhs, t, y, h_used, k1, t_mid)
        stats.rhs_evals += 6
        err_cols = _rms_columns(err[:, active], y[:, active], y_new[:, active], rel_tol, abs_tol)
        err_norm = float(err_cols.max()) if err_cols.size else 0.0
        if not np.isfinite(err_norm):
            bad = np.where(~np.all(np.isfinite(y_new), axis=0))[0]
            raise NumericalBlowupError(f"non-finite state at t={t:.6g} ns", t, bad)

        fac11 = err_norm ** _EXPO if err_norm > 0 else 0.0
        if err_norm <= 1.0:
            stats.accepted += 1
            if record:
                traj.states.append(y)
                traj.dense.append(dense_coefficients(K)
                                  if len(traj.states) <= DENSE_STORAGE_LIMIT else None)
                traj.times.append(t_new)
                traj.t_mid.append(t_mid)
            fac = fac11 / fac_old ** _BETA if fac11 > 0 else 0.0
            fac = min(1 / _FAC_MIN, max(1 / _FAC_MAX, fac / _SAFE))
            fac_old = max(err_norm, 1e-4)
            h = h_used / fac
            t, y = t_new, y_new
            if hit_stop:
                done = active & (column_end == t)
                if done.any():
                    y_end[:, done] = y[:, done]
                    y = y.copy()
                    y[:, done] = 0.0
                    active = active & ~done
                stop_idx += 1
                if stop_idx < len(stops):
                    k1 = rhs(t, y, t + 0.5 * min(h, stops[stop_idx] - t))
                    stats.rhs_evals += 1
            else:
                k1 = K[6]
        else:
            stats.rejected += 1
            h = h_used / min(1 / _FAC_MIN, fac11 / _SAFE)
    return y_end, stats, traj


def _initial_step(y, f0, rel_tol, abs_tol, h_cap):
    scale = abs_tol + rel_tol * np.abs(y)
    d0 = np.sqrt(np.mean(np.abs(y / scale) ** 2))
    d1 = np.sqrt(np.mean(np.abs(f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    return min(h0, h_cap)


def trajectory_dense(traj, rhs, n):
    """Continuous-extension coefficients of step ``n`` (recomputed if not stored)."""
    q = traj.dense[n]
    if q is None:
        t0, h = traj.step(n)
        y = traj.states[n]
        k1 = rhs(t0, y, traj.t_mid[n])
        _, K, _ = _rk_step(rhs, t0, y, h, k1, traj.t_mid[n])
        q = dense_coefficients(K)
    return q


# --- the two-transmon model as a batched right-hand side -------------------


class _EdgeShape:
    """Lifted-Gaussian shape factor for a batch of pulses, constants precomputed.

    Valid for ``t >= 0``; the shape is exactly zero past each column's end.
    """

    def __init__(self, total_ns, rise_ns, sigma_ns):
        self.total = total_ns
        self.rise = rise_ns
        self.fall_start = total_ns - rise_ns
        self.floor = np.exp(-(rise_ns * rise_ns) / (2 * sigma_ns * sigma_ns))
        self.span = 1 - self.floor
        self.inv_two_var = 1 / (2 * sigma_ns * sigma_ns)
        self.uniform = (np.all(rise_ns == rise_ns[0]) and np.all(sigma_ns == sigma_ns[0]))
        if self.uniform:
            self.r0, self.floor0, self.span0 = float(rise_ns[0]), float(self.floor[0]), float(self.span[0])
            self.k0 = float(self.inv_two_var[0])

    def __call__(self, t):
        if self.uniform:
            if self.r0 == 0.0:
                return (t <= self.total).astype(float)
            if t < self.r0:
                x = self.r0 - t
                return (np.exp(-x * x * self.k0) - self.floor0) / self.span0
            x = np.minimum(np.maximum(t - self.fall_start, 0.0), self.r0)
            return (np.exp(-(x * x) * self.k0) - self.floor0) / self.span0
        dist = np.minimum(np.maximum(np.maximum(self.rise - t, t - self.fall_start), 0.0),
                          self.rise)
        with np.errstate(invalid="ignore", divide="ignore"):
            lifted = (np.exp(-(dist * dist) * self.inv_two_var) - self.floor) / self.span
        return np.where(self.rise > 0, lifted, 1.0) * (t <= self.total)


class DriveBatch:
    """Per-column pulse parameters for a batch of schedules (times in ns)."""

    def __init__(self, amp1, amp2, total_ns, rise1_ns, sigma1_ns, rise2_ns, sigma2_ns,
                 drive_freq1, drive_freq2):
        self.amp1 = np.asarray(amp1, dtype=float)
        self.amp2 = np.asarray(amp2, dtype=float)
        self.total_ns = np.asarray(total_ns, dtype=float)
        self.rise1_ns, self.sigma1_ns = np.asarray(rise1_ns, float), np.asarray(sigma1_ns, float)
        self.rise2_ns, self.sigma2_ns = np.asarray(rise2_ns, float), np.asarray(sigma2_ns, float)
        self.drive_freq1 = np.asarray(drive_freq1, dtype=float)
        self.drive_freq2 = np.asarray(drive_freq2, dtype=float)
        self.shared_edges = (np.array_equal(self.rise1_ns, self.rise2_ns)
                             and np.array_equal(self.sigma1_ns, self.sigma2_ns))
        self._shape1 = _EdgeShape(self.total_ns, self.rise1_ns, self.sigma1_ns)
        self._shape2 = (self._shape1 if self.shared_edges
                        else _EdgeShape(self.total_ns, self.rise2_ns, self.sigma2_ns))

    @classmethod
    def from_schedules(cls, schedules):
        if not schedules:
            raise InvalidInputError("empty schedule list")

        def col(fn):
            return np.array([fn(s) for s in schedules], dtype=float)

        return cls(
            amp1=col(lambda s: s.pulse_q1.amplitude),
            amp2=col(lambda s: s.pulse_q2.amplitude),
            total_ns=col(lambda s: s.duration_ns),
            rise1_ns=col(lambda s: s.pulse_q1.risefall_dt * s.dt_ns),
            sigma1_ns=col(lambda s: s.pulse_q1.sigma_dt * s.dt_ns),
            rise2_ns=col(lambda s: s.pulse_q2.risefall_dt * s.dt_ns),
            sigma2_ns=col(lambda s: s.pulse_q2.sigma_dt * s.dt_ns),
            drive_freq1=col(lambda s: s.drive_freq_q1),
            drive_freq2=col(lambda s: s.drive_freq_q2),
        )

    @property
    def size(self):
        return len(self.amp1)

    def envelopes(self, t):
        """``(S1(t), S2(t))`` for every column; valid for ``0 <= t``."""
        shape1 = self._shape1(t)
        shape2 = shape1 if self.shared_edges else self._shape2(t)
        return self.amp1 * shape1, self.amp2 * shape2

    def stops(self):
        edges = np.concatenate([self.rise1_ns, self.total_ns - self.rise1_ns,
                                self.rise2_ns, self.total_ns - self.rise2_ns, self.total_ns])
        return np.unique(edges[(edges > 0)])


def _carrier(freqs):
    """Scalar when all columns share one frequency, else the per-column array."""
    return float(freqs[0]) if np.all(freqs == freqs[0]) else freqs


class ModelGenerator:
    """``-i H(t)`` of the corrected model, applied to a batch of states.

    In the rotating frame the state is ``exp(i E t) psi`` with ``E`` the
    diagonal of the static Hamiltonian; the drive keeps its full cosine.
    Terms whose coefficient vanishes for every column are left out.
    """

    def __init__(self, context: ModelContext, corrections, drives: DriveBatch):
        params = context.params
        if corrections.dim != context.dim:
            raise InvalidDimensionError(
                f"corrections are {corrections.dim}x{corrections.dim}, model needs {context.dim}"
            )
        self.context = context
        self.drives = drives
        self.corrections = corrections
        self.energies = context.frame_energies
        self.rotating = context.frame == "rotating"
        self.mod_freq = corrections.modulation(params)
        static = context.h_static - np.diag(self.energies) + corrections.effective("M")

        # (name, operator, carrier angular frequency) for each time-dependent term
        terms = []
        if np.any(drives.amp1) and params.Omega1 != 0:
            terms.append(("X1", params.Omega1 * context.x1, _carrier(drives.drive_freq1)))
        if np.any(drives.amp2) and params.Omega2 != 0:
            terms.append(("X2", params.Omega2 * context.x2, _carrier(drives.drive_freq2)))
        for name, amp in (("D1", drives.amp1), ("D2", drives.amp2)):
            matrix = corrections.effective(name)
            if np.any(amp) and np.any(matrix):
                terms.append((name, matrix, self.mod_freq))
        self._terms = terms
        self._static = static
        d = context.dim
        stack = [static] + [op for _, op, _ in terms]
        self._ops = (-1j * np.stack(stack)).reshape(len(stack) * d, d)
        self._n_ops = len(stack)

    @property
    def dim(self):
        return self.context.dim

    def phases(self, t):
        """``exp(-i E t)``, mapping frame coordinates back to the lab frame."""
        return np.exp(-1j * self.energies * t)

    def coefficients(self, t):
        """Time-dependent prefactor of each non-static term, per column."""
        s1, s2 = self.drives.envelopes(t)
        out = []
        for name, _, freq in self._terms:
            env = s1 if name in ("X1", "D1") else s2
            carrier = math.cos(freq * t) if isinstance(freq, float) else np.cos(freq * t)
            out.append(env * carrier)
        return out

    def correction_weights(self, t, terms):
        """Scalar prefactor of each correction term, per column."""
        s1, s2 = self.drives.envelopes(t)
        carrier = math.cos(self.mod_freq * t)
        table = {"M": np.ones_like(s1), "D1": s1 * carrier, "D2": s2 * carrier}
        return np.stack([table[name] for name in terms])

    def __call__(self, t, y, t_mid=None):
        if self.rotating:
            phase = self.phases(t)[:, None]
            y = phase * y
        d, b = y.shape
        z = (self._ops @ y).reshape(self._n_ops, d, b)
        out = z[0]
        for k, c in enumerate(self.coefficients(t), start=1):
            out = out + z[k] * c
        if self.rotating:
            out = out * phase.conj()
        return out

    def max_step(self):
        """A tenth of the fastest oscillation period present in the frame."""
        e = self.energies
        gaps = np.abs(e[:, None] - e[None, :])
        f = 0.0
        mats = [(self._static, 0.0)] + [(op, freq) for _, op, freq in self._terms]
        for op, freq in mats:
            nz = np.abs(op) > 0
            if not nz.any():
                continue
            fastest_carrier = float(np.max(np.abs(freq)))
            f = max(f, float(gaps[nz].max()) + fastest_carrier if self.rotating
                    else fastest_carrier)
        f /= 2 * np.pi
        return np.inf if f == 0 else 1.0 / (10.0 * f)

    def to_frame(self, psi_lab, t):
        return psi_lab / self.phases(t)[:, None] if self.rotating else psi_lab

    def to_lab(self, psi, t):
        return psi * self.phases(t)[:, None] if self.rotating else psi


def solve_batch(context, corrections, schedules, psi0, record=False, rel_tol=None, abs_tol=None):
    """Integrate each schedule from its initial state (columns of ``psi0``).

    Returns ``(final_states_in_frame, generator, stats, trajectory)``; final
    states are in the generator's frame, evaluated at each column's end time.
    """
    drives = DriveBatch.from_schedules(schedules)
    gen = ModelGenerator(context, corrections, drives)
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (context.dim, drives.size):
        raise InvalidDimensionError(
            f"initial states have shape {psi0.shape}, expected {(context.dim, drives.size)}"
        )
    y_end, stats, traj = integrate(
        gen, psi0, drives.total_ns, drives.stops(),
        context.rel_tol if rel_tol is None else rel_tol,
        context.abs_tol if abs_tol is None else abs_tol,
        h_max=gen.max_step(), record=record,
    )
    return y_end, gen, stats, traj


def evolve(params, corrections, schedule, psi0, rel_tol=DEFAULT_REL_TOL, abs_tol=DEFAULT_ABS_TOL,
           frame=DEFAULT_FRAME):
    """State at the end of ``schedule`` under the corrected Hamiltonian (lab frame)."""
    psi0 = np.asarray(psi0, dtype=complex)
    if not rel_tol > 0 or not abs_tol > 0:
        raise InvalidInputError("tolerances must be positive")
    if abs(np.linalg.norm(psi0) - 1) > 1e-10:
        raise InvalidInputError("initial state must be normalised")
    context = ModelContext(params, frame=frame, rel_tol=rel_tol, abs_tol=abs_tol)
    y_end, gen, _, _ = solve_batch(context, corrections, [schedule], psi0[:, None])
    return gen.to_lab(y_end, schedule.duration_ns)[:, 0]


# --- piecewise-constant Hamiltonians -------------------------------------


class PiecewiseGenerator:
    def __init__(self, segments):
        self.hams = [np.asarray(h, dtype=complex) for h, _ in segments]
        self.bounds = np.cumsum([0.0] + [float(tau) for _, tau in segments])

    def __call__(self, t, y, t_mid=None):
        ref = t if t_mid is None else t_mid
        k = int(np.clip(np.searchsorted(self.bounds, ref, side="right") - 1,
                        0, len(self.hams) - 1))
        return -1j * (self.hams[k] @ y)


def _check_segments(segments):
    for h, tau in segments:
        h = np.asarray(h)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise InvalidDimensionError(f"segment Hamiltonian has shape {h.shape}")
        if not tau > 0:
            raise InvalidInputError("segment durations must be positive")
        if not np.allclose(h, h.conj().T, atol=1e-12, rtol=0):
            raise InvalidInputError("segment Hamiltonian is not Hermitian")


def evolve_piecewise(segments, psi0, rel_tol=DEFAULT_REL_TOL, abs_tol=DEFAULT_ABS_TOL):
    """Adaptive-integrator evolution through piecewise-constant Hamiltonians."""
    _check_segments(segments)
    psi0 = np.asarray(psi0, dtype=complex)
    if not segments:
        return psi0.copy()
    gen = PiecewiseGenerator(segments)
    total = gen.bounds[-1]
    y_end, _, _ = integrate(gen, psi0[:, None], [total], gen.bounds[1:], rel_tol, abs_tol)
    return y_end[:, 0]


def propagate_exact(segments, psi0):
    """Apply ``exp(-i H_k tau_k)`` for each segment in order (eigendecomposition)."""
    _check_segments(segments)
    psi = np.array(psi0, dtype=complex)
    for h, tau in segments:
        h = np.asarray(h, dtype=complex)
        if psi.shape[0] != h.shape[0]:
            raise InvalidDimensionError("state and Hamiltonian dimensions differ")
        w, v = linalg.eigh((h + h.conj().T) / 2)
        psi = v @ (np.exp(-1j * w * tau) * (v.conj().T @ psi))
    return psi


def computational_probs(psi, levels, renormalize=False):
    """Populations of |00>, |01>, |10>, |11>; leakage is simply left out."""
    psi = np.asarray(psi)
    if psi.shape[0] != levels * levels:
        raise InvalidDimensionError(f"state of length {psi.shape[0]} is not {levels}x{levels}")
    p = np.abs(psi[ops.computational_indices(levels)]) ** 2
    if renormalize:
        p = p / p.sum(axis=0)
    return p


def fidelity(a, b):
    return float(abs(np.vdot(a, b)) ** 2)
