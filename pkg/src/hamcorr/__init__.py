"""Driven two-transmon simulation with learned Hamiltonian corrections."""
from .adjoint import batch_gradient, finite_difference_gradient, loss_gradient
from .dataio import (DataPoint, Dataset, generate_synthetic, load_dataset, save_dataset,
                     split, standard_grid)
from .dynamics import computational_probs, evolve, evolve_piecewise, fidelity, propagate_exact
from .hamiltonian import (CorrectionSet, DeviceParams, ModelContext,
                          effective_cr_coefficients, total_hamiltonian)
from .model import PreparedModel
from .pulses import GaussianSquarePulse, PulseSchedule, duration_ladder, envelope
from .training import FitConfig, FitResult, fit, loss

__version__ = "0.1.0"
