"""Fixed operators on the truncated two-transmon Hilbert space.

Basis ordering is ``|n1 n2>`` with ``n2`` varying fastest, so the flat index
of a product state is ``levels * n1 + n2``.
"""
import numpy as np

from .errors import InvalidDimensionError

FIRST = "first"
SECOND = "second"


def _check_levels(levels):
    if int(levels) != levels or levels < 2:
        raise InvalidDimensionError(f"levels must be an integer >= 2, got {levels!r}")
    return int(levels)


def ladder(levels):
    """Lowering operator ``a`` with ``a[n-1, n] = sqrt(n)``."""
    levels = _check_levels(levels)
    return np.diag(np.sqrt(np.arange(1, levels, dtype=float)), k=1).astype(complex)


def number(levels):
    """Number operator ``diag(0, 1, ..., levels-1)``."""
    levels = _check_levels(levels)
    return np.diag(np.arange(levels, dtype=float)).astype(complex)


def embed(op, position, levels):
    """Lift a single-transmon operator to the two-transmon space.

    ``position="first"`` gives ``op (x) I``, ``position="second"`` gives ``I (x) op``.
    """
    levels = _check_levels(levels)
    op = np.asarray(op)
    if op.shape != (levels, levels):
        raise InvalidDimensionError(
            f"operator shape {op.shape} does not match levels={levels}"
        )
    eye = np.eye(levels, dtype=complex)
    if position == FIRST:
        return np.kron(op, eye)
    if position == SECOND:
        return np.kron(eye, op)
    raise InvalidDimensionError(f"position must be 'first' or 'second', got {position!r}")


def hermitize(a):
    """Return ``(A + A^dagger) / 2``."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidDimensionError(f"expected a square matrix, got shape {a.shape}")
    return (a + a.conj().T) / 2


def basis_index(n1, n2, levels):
    return levels * n1 + n2


def computational_indices(levels):
    """Flat indices of |00>, |01>, |10>, |11> in that order."""
    return np.array([basis_index(n1, n2, levels) for n1 in (0, 1) for n2 in (0, 1)])


def basis_state(label, levels):
    """State vector for a two-character label such as ``"10"``."""
    label = str(label)
    if len(label) != 2 or not label.isdigit():
        raise InvalidDimensionError(f"state label must look like '01', got {label!r}")
    n1, n2 = int(label[0]), int(label[1])
    if n1 >= levels or n2 >= levels:
        raise InvalidDimensionError(f"state {label!r} outside {levels}-level truncation")
    psi = np.zeros(levels * levels, dtype=complex)
    psi[basis_index(n1, n2, levels)] = 1.0
    return psi
