"""Small input-validation helpers used at public entry points."""

import math
import numbers

import numpy as np

from .exceptions import GeometryError


def as_vec3(v, name="vector"):
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise GeometryError(f"{name} must have shape (3,), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GeometryError(f"{name} must be finite")
    return a


def as_points(p, name="points", min_count=0):
    """Coerce to a finite (n, 3) float array."""
    a = np.asarray(p, dtype=float)
    if a.ndim == 1 and a.shape == (3,):
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != 3:
        raise GeometryError(f"{name} must have shape (n, 3), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GeometryError(f"{name} must be finite")
    if len(a) < min_count:
        raise GeometryError(f"{name} needs at least {min_count} rows, got {len(a)}")
    return a


def as_pixels(p, name="pixels"):
    a = np.asarray(p, dtype=float)
    if a.ndim != 2 or a.shape[1] != 2:
        raise GeometryError(f"{name} must have shape (n, 2), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GeometryError(f"{name} must be finite")
    return a


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not math.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_probability(value, name, upper_inclusive=True):
    value = float(value)
    ok = 0.0 <= value <= 1.0 if upper_inclusive else 0.0 <= value < 1.0
    if not ok:
        raise ValueError(f"{name} out of range: {value!r}")
    return value
