"""Input validation helpers shared by the public functions and estimators."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import ArityError, DomainError


def as_vector(x, name="x", min_length=1):
    """Return ``x`` as a finite 1-D float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ArityError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < min_length:
        raise ArityError(f"{name} needs at least {min_length} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def as_matrix(x, name="x", square=False):
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise ArityError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if square and arr.shape[0] != arr.shape[1]:
        raise ArityError(f"{name} must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def check_same_length(*arrays, names=None):
    lengths = [len(a) for a in arrays]
    if len(set(lengths)) > 1:
        label = ", ".join(names) if names else "inputs"
        raise ArityError(f"{label} must have equal lengths, got {lengths}")
    return lengths[0]


def check_scalar(value, name, *, lower=None, upper=None, strict_lower=False):
    """Validate a real scalar against optional bounds and return it as float."""
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise DomainError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value}")
    if lower is not None:
        if strict_lower and value <= lower:
            raise DomainError(f"{name} must be > {lower}, got {value}")
        if not strict_lower and value < lower:
            raise DomainError(f"{name} must be >= {lower}, got {value}")
    if upper is not None and value > upper:
        raise DomainError(f"{name} must be <= {upper}, got {value}")
    return value


def check_n_steps(n, name="n"):
    if not isinstance(n, numbers.Integral) or isinstance(n, bool) or n < 1:
        raise DomainError(f"{name} must be a positive integer, got {n!r}")
    return int(n)
