"""Fitting correction matrices with Nesterov-momentum gradient descent."""
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .adjoint import batch_gradient
from .errors import DivergenceError, InvalidParameterError
from .hamiltonian import TERMS
from .model import corrections_to_params, params_to_corrections, point_losses

__all__ = [
    "FitConfig", "FitResult", "fit", "loss", "average_loss",
    "params_to_corrections", "corrections_to_params", "parse_terms",
]

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 50

_TERM_FLAGS = {
    "m": (True, False, False),
    "d1": (False, True, False),
    "d2": (False, False, True),
    "d1d2": (False, True, True),
    "all": (True, True, True),
}


def parse_terms(spec):
    """'d2', 'm', 'd1,d2', 'all' ... -> three booleans for (M, D1, D2)."""
    flags = [False, False, False]
    for part in str(spec).lower().replace("+", ",").split(","):
        part = part.strip()
        if part not in _TERM_FLAGS:
            raise InvalidParameterError(f"unknown correction term {part!r}")
        flags = [a or b for a, b in zip(flags, _TERM_FLAGS[part])]
    return tuple(flags)


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 3e-7
    momentum: float = 0.9
    max_iterations: int = 5000
    loss_threshold: float = None  # None: 0.02 per training point
    active_terms: tuple = (False, False, True)
    seed: int = 0
    init_scale: float = 0.0
    complex_params: bool = False
    log_every: int = 50
    lr_decay: float = 1.0  # learning rate at iteration k is learning_rate * lr_decay**k

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidParameterError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidParameterError("momentum must lie in [0, 1)")
        if int(self.max_iterations) < 1:
            raise InvalidParameterError("max_iterations must be at least 1")
        if self.loss_threshold is not None and self.loss_threshold < 0:
            raise InvalidParameterError("loss_threshold must be non-negative")
        if len(self.active_terms) != 3 or not any(self.active_terms):
            raise InvalidParameterError("active_terms needs three flags, at least one set")
        if self.init_scale < 0:
            raise InvalidParameterError("init_scale must be non-negative")
        if not 0.0 < self.lr_decay <= 1.0:
            raise InvalidParameterError("lr_decay must lie in (0, 1]")
        object.__setattr__(self, "active_terms", tuple(bool(a) for a in self.active_terms))

    def threshold_for(self, n_points):
        return 0.02 * n_points if self.loss_threshold is None else float(self.loss_threshold)

    def to_dict(self):
        return {
            "learning_rate": self.learning_rate, "momentum": self.momentum,
            "max_iterations": int(self.max_iterations), "loss_threshold": self.loss_threshold,
            "active_terms": [name for name, a in zip(TERMS, self.active_terms) if a],
            "seed": int(self.seed), "init_scale": self.init_scale,
            "complex_params": self.complex_params, "lr_decay": self.lr_decay,
        }

    @classmethod
    def from_dict(cls, data):
        terms = data.get("active_terms", ["D2"])
        flags = tuple(name in terms for name in TERMS)
        return cls(
            learning_rate=float(data["learning_rate"]), momentum=float(data["momentum"]),
            max_iterations=int(data["max_iterations"]), loss_threshold=data.get("loss_threshold"),
            active_terms=flags, seed=int(data.get("seed", 0)),
            init_scale=float(data.get("init_scale", 0.0)),
            complex_params=bool(data.get("complex_params", False)),
            lr_decay=float(data.get("lr_decay", 1.0)),
        )


@dataclass
class FitResult:
    corrections: object
    params: np.ndarray
    final_loss: float
    loss_history: list
    iterations_used: int
    wall_time_s: float
    config: FitConfig = None
    n_points: int = 0
    pair: tuple = None
    metadata: dict = field(default_factory=dict)

    @property
    def average_loss(self):
        return self.final_loss / self.n_points if self.n_points else float("nan")


def loss(p, points, model):
    """Summed L1 loss of ``points`` under parameter vector ``p``."""
    if not points:
        raise InvalidParameterError("loss needs at least one datapoint")
    return float(point_losses(model, np.asarray(p, dtype=float), points).sum())


def average_loss(p, points, model):
    return loss(p, points, model) / len(points)


def _initial_vector(config, model, frozen):
    p = np.zeros(model.n_params)
    if config.init_scale > 0:
        rng = np.random.default_rng(config.seed)
        p = config.init_scale * rng.standard_normal(model.n_params)
    p[frozen] = 0.0
    return p


def fit(points, config, model, callback=None):
    """Fit corrections to ``points`` (one amplitude pair's training slice).

    Nesterov update: the gradient is taken at the look-ahead point
    ``p + mu v``, then ``v <- mu v - lr grad`` and ``p <- p + v``. Diagonal
    entries and inactive terms are reset to zero after every step. Stops when
    the loss reaches the threshold or after ``max_iterations`` gradient
    evaluations. With ``lr_decay < 1`` the step shrinks geometrically, which
    damps the chatter a constant step leaves around the kinks of the L1 loss.
    """
    if not points:
        raise InvalidParameterError("fit needs at least one datapoint")
    model = replace(model, active=config.active_terms, complex_params=config.complex_params)
    frozen = model.diagonal_mask | model.inactive_mask()
    threshold = config.threshold_for(len(points))
    lr, mu = config.learning_rate, config.momentum

    start = time.perf_counter()
    p = _initial_vector(config, model, frozen)
    v = np.zeros_like(p)
    history = []
    initial = None
    above = 0
    converged = False
    for it in range(int(config.max_iterations)):
        look = p + mu * v
        look[frozen] = 0.0
        value, grad = batch_gradient(look, points, model)
        history.append(value)
        if initial is None:
            initial = value
        if callback is not None:
            callback(it, value)
        if config.log_every and it % config.log_every == 0:
            log.info("iteration %d loss %.6g (average %.4g)", it, value, value / len(points))
        if value <= threshold:
            p = look
            converged = True
            break
        above = above + 1 if value > DIVERGENCE_FACTOR * initial else 0
        if above >= DIVERGENCE_PATIENCE:
            raise DivergenceError(
                f"loss stayed above {DIVERGENCE_FACTOR:g}x its initial value ({initial:.4g}) "
                f"for {DIVERGENCE_PATIENCE} iterations at iteration {it}; "
                f"try a smaller learning_rate than {lr:g}"
            )
        v = mu * v - lr * config.lr_decay ** it * grad
        v[frozen] = 0.0
        p = p + v
        p[frozen] = 0.0
    iterations = len(history)
    if not converged:
        history.append(loss(p, points, model))
    return FitResult(
        corrections=model.corrections(p), params=p, final_loss=history[-1],
        loss_history=history, iterations_used=iterations,
        wall_time_s=time.perf_counter() - start, config=config, n_points=len(points),
    )
