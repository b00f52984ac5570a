import math

import numpy as np
import pytest

from hamcorr.hamiltonian import CorrectionSet, DeviceParams, ModelContext

TWO_PI = 2 * math.pi

# scaled-down device: carriers of a few tens of MHz keep integrations short
SCALED = DeviceParams(
    omega1=TWO_PI * 0.05, omega2=TWO_PI * 0.045,
    delta1=-TWO_PI * 0.02, delta2=-TWO_PI * 0.02,
    j12=TWO_PI * 0.001, Omega1=TWO_PI * 0.02, Omega2=TWO_PI * 0.02,
)


def planted_d2(a=0.01, b=-0.008, dim=9):
    """D2 with entries only at |00><01| and |10><11| (plus transposes)."""
    d2 = np.zeros((dim, dim), dtype=complex)
    d2[0, 1] = d2[1, 0] = a
    d2[3, 4] = d2[4, 3] = b
    z = np.zeros((dim, dim), dtype=complex)
    return CorrectionSet(z, z.copy(), d2, active=(False, False, True))


@pytest.fixture
def device():
    return SCALED


@pytest.fixture
def context():
    return ModelContext(SCALED)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import REPORT
    except ImportError:
        return
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT.values():
            terminalreporter.write_line(line)


def short_points(rng, n=3, durations=(384, 512, 640), normalized=False):
    """A few cheap datapoints with random targets."""
    from hamcorr.dataio import DataPoint
    states = ("00", "10", "01", "11")
    out = []
    for k in range(n):
        probs = rng.dirichlet(np.ones(5))[:4] if not normalized else rng.dirichlet(np.ones(4))
        out.append(DataPoint(0.02, 0.4, durations[k % len(durations)], states[k % 4],
                             tuple(probs), None, normalized))
    return out


def prepared(active=(True, True, True), complex_params=False, frame="rotating", **kw):
    from hamcorr.model import PreparedModel
    ctx = ModelContext(SCALED, frame=frame)
    return PreparedModel(ctx, SCALED.omega2, SCALED.omega2, active=active,
                         complex_params=complex_params, **kw)
