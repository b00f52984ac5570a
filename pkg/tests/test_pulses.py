import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamcorr.errors import InvalidInputError
from hamcorr.pulses import (DEFAULT_DT_NS, GaussianSquarePulse, PulseSchedule, duration_ladder,
                            envelope, envelope_values)


def test_plateau_value_is_amplitude():
    p = GaussianSquarePulse(0.4, 384)
    assert envelope(p, 192 * DEFAULT_DT_NS) == 0.4
    # the edge meets the plateau continuously and exactly
    assert envelope(p, 32 * DEFAULT_DT_NS) == 0.4


def test_edges_start_at_zero():
    p = GaussianSquarePulse(0.4, 384)
    assert envelope(p, 0.0) == 0.0
    assert envelope(p, 384 * DEFAULT_DT_NS) == 0.0
    assert envelope(p, -1.0) == 0.0
    assert envelope(p, 384 * DEFAULT_DT_NS + 1.0) == 0.0


def test_edge_golden_values():
    # lifted Gaussian g(x) = A (exp(-x^2/2s^2) - exp(-r^2/2s^2)) / (1 - exp(-r^2/2s^2)),
    # x measured from the plateau join, r = 32 dt, s = 8 dt; values in units of dt
    p = GaussianSquarePulse(1.0, 384)
    floor = np.exp(-32 ** 2 / 128)
    for x in (8.0, 16.0, 24.0):
        expected = (np.exp(-x * x / 128) - floor) / (1 - floor)
        got = envelope(p, (32 - x) * DEFAULT_DT_NS)
        assert got == pytest.approx(expected, rel=1e-12)
    # frozen reference (mpmath): one sigma into the edge
    assert envelope(p, 24 * DEFAULT_DT_NS) == pytest.approx(0.606398621159742, rel=1e-12)


def test_zero_amplitude_is_zero_everywhere():
    p = GaussianSquarePulse(0.0, 512)
    t = np.linspace(-5, 120, 301)
    assert np.all(envelope_values(t, 0.0, 512 * DEFAULT_DT_NS, 32 * DEFAULT_DT_NS,
                                  8 * DEFAULT_DT_NS) == 0)
    assert envelope(p, 50.0) == 0


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(64, 4000), st.floats(-10, 1000))
def test_envelope_symmetric_and_bounded(amp, dur, t):
    p = GaussianSquarePulse(amp, dur)
    total = dur * DEFAULT_DT_NS
    a = envelope(p, t)
    assert 0.0 <= a <= amp
    assert a == pytest.approx(envelope(p, total - t), abs=1e-12)


def test_gaussian_preset():
    p = GaussianSquarePulse.gaussian(0.3, 160)
    assert p.risefall_dt == 80 and p.sigma_dt == 40
    assert envelope(p, 80 * DEFAULT_DT_NS) == pytest.approx(0.3)


def test_invalid_pulses():
    with pytest.raises(InvalidInputError):
        GaussianSquarePulse(0.1, 40)
    with pytest.raises(InvalidInputError):
        GaussianSquarePulse(0.1, 0)
    with pytest.raises(InvalidInputError):
        GaussianSquarePulse(0.1, 384, sigma_dt=0)
    with pytest.raises(InvalidInputError):
        PulseSchedule(GaussianSquarePulse(0.1, 384), GaussianSquarePulse(0.1, 512), 1.0, 1.0)


def test_duration_ladder_endpoints():
    ladder = duration_ladder(20, 320, 128, 64)
    assert ladder[0] == 384 and ladder[-1] == 2816
    # quoted durations are truncated to two decimals
    assert math.floor(ladder[0] * DEFAULT_DT_NS * 100) / 100 == 85.33
    assert math.floor(ladder[-1] * DEFAULT_DT_NS * 100) / 100 == 625.77
    assert duration_ladder(1, 320, 128, 64) == [384]
    assert duration_ladder(30)[-1] == 320 + 29 * 128 + 64
    with pytest.raises(InvalidInputError):
        duration_ladder(0)


def test_schedule_edges():
    s = PulseSchedule(GaussianSquarePulse(0.1, 384), GaussianSquarePulse(0.2, 384), 1.0, 1.0)
    edges = s.edge_times()
    assert edges[0] == 0.0 and edges[-1] == pytest.approx(384 * DEFAULT_DT_NS)
    assert len(edges) == 4
