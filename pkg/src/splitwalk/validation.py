"""Input validation helpers shared by the simulation and analysis code."""

from __future__ import annotations

import numbers

import numpy as np


class DegenerateFitError(ValueError):
    """Raised when a fit has too few usable points to be meaningful."""


class ConvergenceWarning(UserWarning):
    """Issued when a truncated time series has not converged enough."""


def check_extents(extents) -> tuple:
    extents = tuple(int(n) for n in extents)
    if len(extents) != 2 or min(extents) < 1:
        raise ValueError(f"extents must be two positive integers, got {extents}")
    return extents


def check_finite(**values):
    for name, value in values.items():
        if not np.all(np.isfinite(value)):
            raise ValueError(f"{name} must be finite, got {value!r}")


def check_probability(name: str, p) -> float:
    if not isinstance(p, numbers.Real) or not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p!r}")
    return float(p)


def check_array(x, name="X", ndim=None, min_size=1, nonnegative=False) -> np.ndarray:
    """Convert to a float array and check shape, size, finiteness and sign."""
    arr = np.asarray(x, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size < min_size:
        raise ValueError(f"{name} needs at least {min_size} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    if nonnegative and np.any(arr < 0):
        raise ValueError(f"{name} must be nonnegative")
    return arr


def check_is_fitted(estimator, attribute: str):
    if not hasattr(estimator, attribute):
        raise RuntimeError(f"{type(estimator).__name__} is not fitted yet; call fit first")
