from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import SCALED, planted_d2, prepared, short_points
from hamcorr.dataio import DataPoint
from hamcorr.errors import DivergenceError, InvalidParameterError
from hamcorr.model import (n_params, params_to_corrections, corrections_to_params,
                           simulate_points, zero_diagonal_mask)
from hamcorr.training import FitConfig, fit, loss, parse_terms


def test_zero_vector_gives_zero_corrections():
    c = params_to_corrections(np.zeros(243), 9)
    assert all(np.count_nonzero(m) == 0 for m in c.matrices.values())


def test_single_entry_is_symmetrised():
    p = np.zeros(243)
    p[2 * 81 + 0 * 9 + 1] = 1.0  # D2 block, row 0, col 1
    c = params_to_corrections(p, 9)
    assert c.D2[0, 1] == 0.5 and c.D2[1, 0] == 0.5
    assert np.count_nonzero(c.D2) == 2
    assert np.count_nonzero(c.M) == 0 and np.count_nonzero(c.D1) == 0


def test_length_mismatch():
    with pytest.raises(InvalidParameterError):
        params_to_corrections(np.zeros(242), 9)
    with pytest.raises(InvalidParameterError):
        params_to_corrections(np.zeros(243), 9, complex_params=True)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 486, elements=st.floats(-1, 1)), st.booleans())
def test_projection_is_idempotent(p, complex_params):
    p = p if complex_params else p[:243]
    c1 = params_to_corrections(p, 9, complex_params=complex_params)
    q = corrections_to_params(c1, complex_params)
    c2 = params_to_corrections(q, 9, complex_params=complex_params)
    assert np.array_equal(corrections_to_params(c2, complex_params), q)
    for m in c1.matrices.values():
        assert np.all(np.diag(m) == 0)
        assert np.abs(m - m.conj().T).max() == 0


def test_complex_block_layout():
    p = np.zeros(n_params(9, True))
    p[5 * 81 + 1] = 2.0  # imaginary D2 block, entry (0, 1)
    c = params_to_corrections(p, 9, complex_params=True)
    assert c.D2[0, 1] == 1j and c.D2[1, 0] == -1j


def test_inactive_blocks_are_zero():
    c = params_to_corrections(np.ones(243), 9, active=(False, True, False))
    assert np.count_nonzero(c.M) == 0 and np.count_nonzero(c.D2) == 0
    assert np.count_nonzero(c.D1) == 72


def test_diagonal_mask():
    mask = zero_diagonal_mask(9)
    assert mask.sum() == 27 and mask[0] and mask[10] and not mask[1]
    assert zero_diagonal_mask(9, True).sum() == 54


def test_per_point_loss_bounded(rng):
    model = prepared()
    points = short_points(rng, 4)
    for _ in range(3):
        p = rng.normal(0, 0.05, model.n_params)
        from hamcorr.model import point_losses
        assert np.all(point_losses(model, p, points) <= 2.0)


def test_self_consistent_targets(rng):
    model = prepared(active=(False, False, True))
    truth = np.zeros(model.n_params)
    truth[2 * 81 + 1] = 0.02
    stub = short_points(rng, 3)
    _, probs = simulate_points(model, model.corrections(truth), stub)
    pts = [DataPoint(s.amplitude_target, s.amplitude_control, s.total_duration_dt,
                     s.initial_state, tuple(pr)) for s, pr in zip(stub, probs)]
    assert loss(truth, pts, model) < 1e-8
    assert loss(np.zeros(model.n_params), pts, model) > 1e-4


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        FitConfig(learning_rate=0)
    with pytest.raises(InvalidParameterError):
        FitConfig(momentum=1.0)
    with pytest.raises(InvalidParameterError):
        FitConfig(loss_threshold=-1)
    with pytest.raises(InvalidParameterError):
        FitConfig(active_terms=(False, False, False))
    assert FitConfig().threshold_for(20) == pytest.approx(0.4)
    assert FitConfig.from_dict(FitConfig(seed=3).to_dict()) == FitConfig(seed=3)


def test_parse_terms():
    assert parse_terms("d2") == (False, False, True)
    assert parse_terms("m") == (True, False, False)
    assert parse_terms("d1,d2") == (False, True, True)
    assert parse_terms("all") == (True, True, True)
    with pytest.raises(InvalidParameterError):
        parse_terms("d3")


def _exact_points(model, p, stub):
    _, probs = simulate_points(model, model.corrections(p), stub)
    return [DataPoint(s.amplitude_target, s.amplitude_control, s.total_duration_dt,
                      s.initial_state, tuple(pr)) for s, pr in zip(stub, probs)]


def test_fit_stops_immediately_when_optimal(rng):
    model = prepared(active=(False, False, True))
    pts = _exact_points(model, np.zeros(model.n_params), short_points(rng, 2))
    result = fit(pts, FitConfig(learning_rate=1e-7), model)
    assert result.iterations_used == 1
    assert np.all(result.params == 0)
    assert result.final_loss == result.loss_history[-1] <= 1e-10


def test_fit_reduces_loss_and_keeps_structure(rng):
    model = prepared(active=(False, False, True))
    truth = np.zeros(model.n_params)
    truth[2 * 81 + 1] = 0.01
    pts = _exact_points(model, truth, short_points(rng, 3))
    seen = []

    def track(it, value):
        seen.append(value)

    cfg = FitConfig(learning_rate=3e-6, max_iterations=30, loss_threshold=0.0)
    result = fit(pts, cfg, model, callback=track)
    assert result.iterations_used == 30 and len(result.loss_history) == 31
    assert result.final_loss == result.loss_history[-1]
    assert result.final_loss < 0.5 * result.loss_history[0]
    assert seen == result.loss_history[:30]
    for m in result.corrections.matrices.values():
        assert np.all(np.diag(m) == 0)
        assert np.abs(m - m.conj().T).max() < 1e-14
    assert np.count_nonzero(result.corrections.M) == 0
    assert np.count_nonzero(result.corrections.D1) == 0


def test_fit_is_deterministic(rng):
    model = prepared(active=(False, False, True))
    pts = short_points(rng, 2)
    cfg = FitConfig(learning_rate=1e-7, max_iterations=5, loss_threshold=0.0, seed=7,
                    init_scale=1e-3)
    a, b = fit(pts, cfg, model), fit(pts, cfg, model)
    assert a.loss_history == b.loss_history
    assert np.array_equal(a.params, b.params)


def test_seeded_initialisation_respects_mask(rng):
    model = prepared(active=(False, False, True))
    pts = short_points(rng, 1)
    cfg = FitConfig(learning_rate=1e-12, max_iterations=1, loss_threshold=0.0, init_scale=0.01)
    r = fit(pts, cfg, model)
    assert np.all(r.params[model.diagonal_mask] == 0)
    assert np.all(r.params[:162] == 0)
    assert np.any(r.params != 0)


def test_divergence_is_reported(rng):
    model = prepared(active=(False, False, True))
    truth = np.zeros(model.n_params)
    truth[2 * 81 + 1] = 1e-4
    pts = _exact_points(model, truth, short_points(rng, 2, durations=(384,)))
    cfg = FitConfig(learning_rate=1e-3, max_iterations=200, loss_threshold=0.0)
    with pytest.raises(DivergenceError, match="learning_rate"):
        fit(pts, cfg, model)


def test_fit_needs_points():
    with pytest.raises(InvalidParameterError):
        fit([], FitConfig(), prepared())
    with pytest.raises(InvalidParameterError):
        loss(np.zeros(243), [], prepared())


def test_lr_decay_option():
    for bad in (0.0, -0.5, 1.5):
        with pytest.raises(InvalidParameterError):
            FitConfig(lr_decay=bad)
    cfg = FitConfig(lr_decay=0.985, active_terms=(True, False, True))
    assert FitConfig.from_dict(cfg.to_dict()) == replace(cfg, log_every=FitConfig.log_every)
    assert FitConfig.from_dict({k: v for k, v in cfg.to_dict().items()
                                if k != "lr_decay"}).lr_decay == 1.0
