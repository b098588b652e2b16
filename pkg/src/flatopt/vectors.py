"""Flat parameter-vector algebra.

Parameter points are plain 1-D float64 numpy arrays.  All reductions go
through numpy's pairwise summation, a fixed deterministic reduction tree
for a given numpy build, so repeated runs with the same inputs produce
bit-identical results.  BLAS-threaded matmul is avoided here on purpose.
"""

from __future__ import annotations

import numpy as np

#: squared-norm floor below which perturbation directions are treated as zero
NORM_FLOOR = 1e-12


def as_param_vector(values) -> np.ndarray:
    """Coerce to a finite 1-D float64 vector."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1:
        x = x.reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("parameter vector contains non-finite entries")
    return x


def _check_dims(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")


def axpy(a: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """a*x + y elementwise."""
    _check_dims(x, y)
    return a * x + y


def dot(x: np.ndarray, y: np.ndarray) -> float:
    _check_dims(x, y)
    return float(np.add.reduce(np.multiply(x, y)))


def l2_norm(x: np.ndarray) -> float:
    return float(np.sqrt(np.add.reduce(np.multiply(x, x))))


def sq_norm(x: np.ndarray) -> float:
    return float(np.add.reduce(np.multiply(x, x)))
