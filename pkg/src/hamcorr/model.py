"""Parameter-vector mapping and batched forward evaluation of datapoints."""
from dataclasses import dataclass, field

import numpy as np

from . import operators as ops
from .dynamics import solve_batch
from .errors import InvalidDimensionError, InvalidParameterError, NumericalError
from .hamiltonian import TERMS, CorrectionSet, ModelContext
from .pulses import DEFAULT_RISEFALL_DT, DEFAULT_SIGMA_DT, GaussianSquarePulse, PulseSchedule

STATE_LABELS = ("00", "01", "10", "11")


def n_params(dim, complex_params=False):
    return (6 if complex_params else 3) * dim * dim


def params_to_corrections(p, dim, active=(True, True, True), modulation_freq=None,
                          complex_params=False):
    """Build M, D1, D2 from a flat parameter vector.

    Each block of ``dim**2`` entries is reshaped row-major and hermitized;
    diagonals are forced to zero and inactive terms are zero. With
    ``complex_params`` the vector holds the three real blocks followed by three
    imaginary blocks.
    """
    p = np.asarray(p, dtype=float)
    size = dim * dim
    if p.shape != (n_params(dim, complex_params),):
        raise InvalidParameterError(
            f"parameter vector has shape {p.shape}, expected ({n_params(dim, complex_params)},)"
        )
    mats = []
    for k in range(3):
        raw = p[k * size:(k + 1) * size].reshape(dim, dim).astype(complex)
        if complex_params:
            raw = raw + 1j * p[(k + 3) * size:(k + 4) * size].reshape(dim, dim)
        m = ops.hermitize(raw)
        np.fill_diagonal(m, 0.0)
        if not active[k]:
            m[:] = 0.0
        mats.append(m)
    return CorrectionSet(*mats, active=tuple(bool(a) for a in active),
                         modulation_freq=modulation_freq)


def corrections_to_params(corrections, complex_params=False):
    blocks = [corrections.matrices[name] for name in TERMS]
    re = [np.real(b).ravel() for b in blocks]
    if not complex_params:
        return np.concatenate(re)
    im = [np.imag(b).ravel() for b in blocks]
    return np.concatenate(re + im)


def zero_diagonal_mask(dim, complex_params=False):
    """True where a parameter maps onto a diagonal matrix entry."""
    block = np.eye(dim, dtype=bool).ravel()
    return np.tile(block, 6 if complex_params else 3)


@dataclass(frozen=True, eq=False)
class PreparedModel:
    """Everything needed to turn datapoints and a parameter vector into losses."""

    context: ModelContext
    drive_freq_q1: float
    drive_freq_q2: float
    risefall_dt: int = DEFAULT_RISEFALL_DT
    sigma_dt: float = DEFAULT_SIGMA_DT
    active: tuple = (False, False, True)
    modulation_freq: float = None
    complex_params: bool = False
    chunk_size: int = 40
    _diag_mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_diag_mask", zero_diagonal_mask(self.dim, self.complex_params))

    @property
    def params(self):
        return self.context.params

    @property
    def dim(self):
        return self.context.dim

    @property
    def n_params(self):
        return n_params(self.dim, self.complex_params)

    @property
    def diagonal_mask(self):
        return self._diag_mask

    def inactive_mask(self):
        """True for parameters of terms that are switched off."""
        size = self.dim * self.dim
        per_block = np.repeat(~np.array(self.active, dtype=bool), size)
        return np.tile(per_block, 2) if self.complex_params else per_block

    def corrections(self, p):
        return params_to_corrections(p, self.dim, self.active, self.modulation_freq,
                                     self.complex_params)

    def schedule(self, point):
        dt = self.params.dt_ns
        pulse = GaussianSquarePulse
        return PulseSchedule(
            pulse(point.amplitude_target, point.total_duration_dt, self.risefall_dt, self.sigma_dt),
            pulse(point.amplitude_control, point.total_duration_dt, self.risefall_dt, self.sigma_dt),
            self.drive_freq_q1, self.drive_freq_q2, dt,
        )

    def initial_states(self, points):
        return np.stack([ops.basis_state(p.initial_state, self.params.levels) for p in points],
                        axis=1)

    def chunks(self, points):
        """Deterministic batches of point indices, grouped by duration."""
        order = sorted(range(len(points)), key=lambda i: (points[i].total_duration_dt, i))
        size = max(1, int(self.chunk_size))
        return [order[k:k + size] for k in range(0, len(order), size)]


def l1_loss_terms(psi_final, targets, normalized, levels):
    """Per-column L1 loss and the seed ``2 dg/dpsi*`` for the adjoint.

    ``psi_final`` is ``(dim, B)`` in any diagonal frame, ``targets`` ``(4, B)``.
    Uses sign(0) = 0 at exact fits.
    """
    idx = ops.computational_indices(levels)
    amp = psi_final[idx]
    pop = np.abs(amp) ** 2
    total = pop.sum(axis=0)
    norm = np.where(normalized, total, 1.0)
    model = pop / norm
    diff = model - targets
    loss = np.abs(diff).sum(axis=0)
    sgn = np.sign(diff)
    # d loss / d pop_m; renormalised columns pick up the quotient-rule term
    dpop = np.where(normalized, (sgn - (sgn * model).sum(axis=0)) / norm, sgn)
    seed = np.zeros_like(psi_final)
    seed[idx] = 2 * dpop * amp
    return loss, seed, model


def point_targets(points):
    targets = np.array([np.asarray(p.probs, dtype=float) for p in points]).T
    normalized = np.array([bool(p.normalized) for p in points])
    return targets, normalized


def simulate_points(model, corrections, points):
    """Final lab-frame states and 4-outcome probabilities for each point.

    Returns ``(states (dim, N), probs (N, 4))``; probabilities follow each
    point's normalisation convention.
    """
    states = np.zeros((model.dim, len(points)), dtype=complex)
    pops = np.zeros((4, len(points)))
    idx = ops.computational_indices(model.params.levels)
    for chunk in model.chunks(points):
        sub = [points[i] for i in chunk]
        y, gen, _, _ = _solve(model, corrections, sub, record=False)
        ends = np.array([model.schedule(p).duration_ns for p in sub])
        states[:, chunk] = y * np.exp(-1j * np.outer(gen.energies, ends))
        # populations are frame independent; take them before the phase rotation
        # so they agree bit for bit with the loss
        pops[:, chunk] = np.abs(y[idx]) ** 2
    normalized = np.array([bool(p.normalized) for p in points])
    probs = pops / np.where(normalized, pops.sum(axis=0), 1.0)
    return states, probs.T


def point_losses(model, p, points):
    """L1 loss of every point under parameter vector ``p``."""
    corrections = model.corrections(p)
    losses = np.zeros(len(points))
    for chunk in model.chunks(points):
        sub = [points[i] for i in chunk]
        y, _, _, _ = _solve(model, corrections, sub, record=False)
        targets, normalized = point_targets(sub)
        losses[chunk] = l1_loss_terms(y, targets, normalized, model.params.levels)[0]
    return losses


def _solve(model, corrections, points, record):
    if corrections.dim != model.dim:
        raise InvalidDimensionError(
            f"corrections are {corrections.dim}x{corrections.dim}, model needs {model.dim}"
        )
    schedules = [model.schedule(p) for p in points]
    try:
        return solve_batch(model.context, corrections, schedules,
                           model.initial_states(points), record=record)
    except NumericalError as exc:
        cols = getattr(exc, "columns", ())
        names = [describe_point(points[c]) for c in cols] or [describe_point(p) for p in points]
        exc.args = (f"{exc.args[0]} (points: {', '.join(names)})",) + exc.args[1:]
        raise


def describe_point(point):
    return (f"A=({point.amplitude_target}, {point.amplitude_control}) "
            f"T={point.total_duration_dt}dt |{point.initial_state}>")
