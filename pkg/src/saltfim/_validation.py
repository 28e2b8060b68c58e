"""Input validation helpers shared by all modules."""

from __future__ import annotations

import numpy as np

from .exceptions import ValidationError


def as_vector(value, name: str, size: int | None = None) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a vector, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ValidationError(f"{name} must have length {size}, got {arr.shape[0]}")
    return arr


def as_matrix(value, name: str, shape: tuple[int | None, int | None] | None = None) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1 and shape is not None:
        # a 1-D input is a row vector when one row is expected, else a column
        arr = arr.reshape(1, -1) if shape[0] == 1 else arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be a matrix, got shape {arr.shape}")
    if shape is not None:
        for axis, expected in enumerate(shape):
            if expected is not None and arr.shape[axis] != expected:
                raise ValidationError(
                    f"{name} has shape {arr.shape}, expected {tuple(s if s is not None else '*' for s in shape)}"
                )
    return arr


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_symmetric(F, name: str = "matrix", rtol: float = 1e-10) -> np.ndarray:
    F = as_matrix(F, name)
    if F.shape[0] != F.shape[1]:
        raise ValidationError(f"{name} must be square, got {F.shape}")
    scale = max(np.max(np.abs(F)), np.finfo(float).tiny)
    if np.max(np.abs(F - F.T)) > rtol * scale:
        raise ValidationError(f"{name} is not symmetric")
    return F


def check_spd(V, name: str = "covariance") -> np.ndarray:
    """Return the lower Cholesky factor of ``V``; raise if not positive definite."""
    V = check_symmetric(V, name)
    try:
        return np.linalg.cholesky(V)
    except np.linalg.LinAlgError as exc:
        raise ValidationError(f"{name} is not positive definite") from exc


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not (np.isfinite(value) and value > 0):
        raise ValidationError(f"{name} must be strictly positive, got {value}")
    return value
