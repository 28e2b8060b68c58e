"""Central finite differences."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ._validation import as_vector
from .exceptions import NumericalError


def numeric_jacobian(fun: Callable[[np.ndarray], np.ndarray], point, scale: float = 1e-7) -> np.ndarray:
    """Jacobian of ``fun`` at ``point`` by central differences.

    The step for component ``i`` is ``scale * max(|point_i|, 1)``, rounded so
    that ``point_i + h`` is exactly representable. Scalar-valued functions
    yield a ``1 x n`` row.
    """
    p = as_vector(point, "point").copy()
    cols = []
    for i in range(p.size):
        h = scale * max(abs(p[i]), 1.0)
        base = p[i]
        p[i] = base + h
        hp = p[i] - base
        fp = np.atleast_1d(np.asarray(fun(p), dtype=float))
        p[i] = base - h
        hm = base - p[i]
        fm = np.atleast_1d(np.asarray(fun(p), dtype=float))
        p[i] = base
        col = (fp - fm) / (hp + hm)
        if not np.all(np.isfinite(col)):
            raise NumericalError(f"non-finite finite-difference column {i}")
        cols.append(col)
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def numeric_derivative(fun: Callable[[float], np.ndarray], t: float, scale: float = 1e-7) -> np.ndarray:
    """Central difference of a function of one scalar argument."""
    return numeric_jacobian(lambda s: fun(float(s[0])), [t], scale)[:, 0]
