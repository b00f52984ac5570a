"""Gradients of the L1 probability loss by backward (adjoint) integration.

For ``dpsi/dt = -i H(t, p) psi`` and a loss ``g(psi(T))`` the costate
``lam(t)`` solves the same Schrodinger equation backwards from
``lam(T) = 2 dg/dpsi*``, and

    dg/dp_k = integral_0^T Im[ lam^dagger (dH/dp_k) psi ] dt.

The loss only looks at the final state, so the measurement enters as the
terminal jump of ``lam``; there is no running source term. The initial state
does not depend on ``p``, so there is no boundary term at ``t = 0`` either;
that term would have to come back if initial-state parameters were added.

The backward pass reuses the accepted forward mesh and reads ``psi`` from the
forward solver's continuous extension. The parameter integrals are
accumulated with the same Runge-Kutta weights, i.e. they are integrated as
extra components of the backward system.
"""
import numpy as np

from .dynamics import RK_A, RK_B, RK_C, dense_powers, trajectory_dense
from .errors import AdjointDivergenceError, InvalidParameterError
from .hamiltonian import TERMS
from .model import _solve, l1_loss_terms, point_losses, point_targets

_BACK_STAGES = 6
_THETA = dense_powers(1.0 - RK_C[:_BACK_STAGES])


def _check_vector(model, p):
    p = np.asarray(p, dtype=float)
    if p.shape != (model.n_params,):
        raise InvalidParameterError(
            f"parameter vector has length {p.size}, expected {model.n_params}"
        )
    return p


def _pairings(gen, traj, seeds, column_end, terms):
    """Backward sweep; returns ``W[term] = int w_term(t) conj(lam) psi^T dt``.

    ``seeds`` are injected into the costate when the sweep reaches each
    column's end time.
    """
    d, b = seeds.shape
    nt = len(terms)
    acc = np.zeros((nt * d, d), dtype=complex)
    lam = np.zeros((d, b), dtype=complex)
    pending = np.ones(b, dtype=bool)
    for n in reversed(range(traj.n_steps)):
        t0 = traj.times[n]
        t1 = traj.times[n + 1]
        h = t1 - t0
        hit = pending & (column_end == t1)
        if hit.any():
            lam = lam.copy()
            lam[:, hit] += seeds[:, hit]
            pending &= ~hit
        q = trajectory_dense(traj, gen, n)
        psi_stages = traj.states[n][None] + h * np.tensordot(_THETA, q, axes=(1, 0))
        t_mid = traj.t_mid[n]
        K = []
        for i in range(_BACK_STAGES):
            if i == 0:
                li = lam
            else:
                dl = RK_A[i][0] * K[0]
                for j in range(1, i):
                    if RK_A[i][j] != 0.0:
                        dl = dl + RK_A[i][j] * K[j]
                li = lam - h * dl
            ti = t1 - RK_C[i] * h
            K.append(gen(ti, li, t_mid))
            if RK_B[i] != 0.0 and nt:
                w = gen.correction_weights(ti, terms)
                lam_lab = gen.to_lab(li, ti)
                psi_lab = gen.to_lab(psi_stages[i], ti)
                weighted = (lam_lab.conj()[None] * w[:, None, :]).reshape(nt * d, b)
                acc += (h * RK_B[i]) * (weighted @ psi_lab.T)
        lam = lam - h * sum(RK_B[i] * K[i] for i in range(_BACK_STAGES) if RK_B[i] != 0.0)
        if not np.all(np.isfinite(lam)):
            raise AdjointDivergenceError(f"costate became non-finite at t={t0:.6g} ns")
    if pending.any():
        raise AdjointDivergenceError("some end times were never reached on the backward sweep")
    return {name: acc[k * d:(k + 1) * d] for k, name in enumerate(terms)}


def _pairings_to_gradient(model, pairings):
    d = model.dim
    size = d * d
    grad = np.zeros(model.n_params)
    for k, name in enumerate(TERMS):
        if not model.active[k]:
            continue
        w = pairings[name]
        g_re = 0.5 * np.imag(w + w.T)
        np.fill_diagonal(g_re, 0.0)
        grad[k * size:(k + 1) * size] = g_re.ravel()
        if model.complex_params:
            g_im = 0.5 * np.real(w - w.T)
            np.fill_diagonal(g_im, 0.0)
            grad[(k + 3) * size:(k + 4) * size] = g_im.ravel()
    return grad


def _simulation_key(point):
    return (point.amplitude_target, point.amplitude_control, point.total_duration_dt,
            point.initial_state)


def _chunk_gradient(model, corrections, columns, points, owners):
    """Losses of ``points`` and their gradient, simulating each of ``columns`` once.

    ``owners[i]`` is the column that point ``i`` reads its final state from.
    """
    y, gen, stats, traj = _solve(model, corrections, columns, record=True)
    targets, normalized = point_targets(points)
    losses, seeds, _ = l1_loss_terms(y[:, owners], targets, normalized, model.params.levels)
    column_seeds = np.zeros_like(y)
    for i, c in enumerate(owners):
        column_seeds[:, c] += seeds[:, i]
    terms = [name for k, name in enumerate(TERMS) if model.active[k]]
    column_end = np.array([model.schedule(p).duration_ns for p in columns])
    try:
        pairings = _pairings(gen, traj, column_seeds, column_end, terms)
    except AdjointDivergenceError as exc:
        exc.forward_stats = stats.as_dict()
        raise
    return losses, _pairings_to_gradient(model, pairings)


def batch_gradient(p, points, model, return_point_losses=False):
    """Summed L1 loss over ``points`` and its gradient with respect to ``p``.

    Points that share pulse and initial state are simulated once. Chunks are
    processed in a fixed order, so the reduction is deterministic.
    """
    p = _check_vector(model, p)
    if not points:
        raise InvalidParameterError("batch_gradient needs at least one datapoint")
    corrections = model.corrections(p)
    keys = {}
    owner = [keys.setdefault(_simulation_key(pt), len(keys)) for pt in points]
    unique = [None] * len(keys)
    for pt, c in zip(points, owner):
        if unique[c] is None:
            unique[c] = pt
    losses = np.zeros(len(points))
    grad = np.zeros(model.n_params)
    for chunk in model.chunks(unique):
        local = {c: j for j, c in enumerate(chunk)}
        members = [i for i, c in enumerate(owner) if c in local]
        cols = [unique[c] for c in chunk]
        sub = [points[i] for i in members]
        try:
            chunk_losses, chunk_grad = _chunk_gradient(
                model, corrections, cols, sub, [local[owner[i]] for i in members])
        except AdjointDivergenceError as exc:
            exc.args = (f"{exc.args[0]} (chunk of {len(cols)} points starting with "
                        f"duration {cols[0].total_duration_dt}dt)",)
            raise
        losses[members] = chunk_losses
        grad += chunk_grad
    total = float(losses.sum())
    if return_point_losses:
        return total, grad, losses
    return total, grad


def loss_gradient(p, point, model):
    """Loss and adjoint gradient for a single datapoint."""
    return batch_gradient(p, [point], model)


def finite_difference_gradient(p, points, model, step=1e-6, coords=None):
    """Central-difference gradient of the summed loss at the given coordinates."""
    p = _check_vector(model, p)
    if not step > 0:
        raise InvalidParameterError("finite-difference step must be positive")
    if coords is None:
        coords = range(model.n_params)
    if hasattr(points, "initial_state"):
        points = [points]
    out = []
    for k in coords:
        e = np.zeros_like(p)
        e[k] = step
        up = point_losses(model, p + e, points).sum()
        down = point_losses(model, p - e, points).sum()
        out.append((up - down) / (2 * step))
    return np.array(out)
