"""Input validation helpers shared across the library.

Conversions are cheap and never copy when the input already is a float64
array of the right shape.  All checkers raise :class:`flk.errors.ValidationError`
subclasses with stable codes.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateRotationError, ValidationError


def as_vector(x, size: int, name: str) -> np.ndarray:
    """Coerce ``x`` to a float64 vector with exactly ``size`` elements."""
    arr = np.asarray(x, dtype=float)
    if arr.size != size:
        raise ValidationError(f"{name} must have {size} elements, got shape {arr.shape}")
    return arr.reshape(size)


def as_points(x, dim: int, name: str) -> np.ndarray:
    """Coerce ``x`` to an (N, dim) float64 array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1 and arr.size == dim:
        arr = arr.reshape(1, dim)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValidationError(f"{name} must be (N, {dim}), got shape {arr.shape}")
    return arr


def as_bool_mask(x, n: int, name: str) -> np.ndarray:
    """Coerce ``x`` to an (n,) boolean array."""
    arr = np.asarray(x)
    if arr.shape != (n,):
        raise ValidationError(f"{name} must have shape ({n},), got {arr.shape}")
    return arr.astype(bool)


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains NaN or infinite values")
    return arr


def check_rotation(R, name: str = "R", tol: float = 1e-6) -> np.ndarray:
    """Validate that ``R`` is a 3x3 rotation matrix within ``tol``.

    The default tolerance deliberately admits matrices that drift slightly
    off the manifold (e.g. accumulated round-off); callers probing with
    finite differences pass a looser ``tol``.
    """
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValidationError(f"{name} must be 3x3, got shape {R.shape}")
    check_finite(R, name)
    if not np.allclose(R.T @ R, np.eye(3), atol=tol):
        raise DegenerateRotationError(f"{name} is not orthogonal within {tol}")
    if np.linalg.det(R) < 0.0:
        raise DegenerateRotationError(f"{name} has negative determinant (reflection)")
    return R


def check_unit_vector(v, name: str, tol: float = 1e-9) -> np.ndarray:
    v = as_vector(v, 3, name)
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > tol:
        raise ValidationError(f"{name} must be unit length, got norm {norm:.12g}")
    return v
