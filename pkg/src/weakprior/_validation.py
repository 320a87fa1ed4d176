"""Input validation helpers shared by every stage of the pipeline."""

import numpy as np


class DimensionError(ValueError):
    """Raised when array ranks or shapes do not agree with what an operation needs."""


class NonFiniteError(ValueError):
    """An input array holds NaN or Inf."""


class DivergenceError(ArithmeticError):
    """Raised when a computation produces non-finite values."""


def check_grid(a, ndim, name="array", allow_nonfinite=False):
    """Return ``a`` as a float64 array of rank ``ndim``.

    Rejects empty dimensions and, unless ``allow_nonfinite``, NaN/Inf.
    """
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be rank {ndim}, got shape {arr.shape}")
    if any(d == 0 for d in arr.shape):
        raise DimensionError(f"{name} has an empty dimension: {arr.shape}")
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return arr


def check_grid2(a, name="map"):
    return check_grid(a, 2, name)


def check_grid3(a, name="stack"):
    return check_grid(a, 3, name)


def check_label_map(a, n_labels=None, name="labels"):
    arr = np.asarray(a)
    if arr.ndim != 2 or arr.size == 0:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise ValueError(f"{name} must hold integer labels")
    arr = arr.astype(np.int64)
    if arr.min() < 0:
        raise ValueError(f"{name} has negative labels")
    if n_labels is not None and arr.max() >= n_labels:
        raise ValueError(f"{name} has label {arr.max()} outside [0, {n_labels})")
    return arr


def check_same_spatial(*arrays, names=None):
    shapes = [np.shape(a)[-2:] for a in arrays]
    if len(set(shapes)) > 1:
        label = ", ".join(names) if names else "inputs"
        raise DimensionError(f"spatial dims of {label} disagree: {shapes}")
    return shapes[0]


def check_simplex(p, atol=1e-9, name="probabilities"):
    """Validate a (L, H, W) stack whose channel vectors lie on the simplex."""
    p = check_grid3(p, name)
    if p.min() < 0:
        raise ValueError(f"{name} has negative entries")
    sums = p.sum(axis=0)
    if not np.allclose(sums, 1.0, rtol=0, atol=atol):
        worst = float(np.abs(sums - 1.0).max())
        raise ValueError(f"{name} channels do not sum to 1 (max deviation {worst:.3g})")
    return p
