"""Dense linear-algebra helpers shared by every module.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Randomness
comes from :func:`make_rng`, which wraps NumPy's PCG64 bit generator; PCG64
produces the same stream for the same seed on every platform NumPy supports.
"""

import numpy as np

from .exceptions import DimMismatchError, ZeroRowError

ZERO_NORM = 1e-12


def make_rng(seed):
    """Return a ``numpy.random.Generator`` backed by PCG64 seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


def as_matrix(m, name="matrix"):
    """Validate ``m`` as a finite, non-empty 2-D float64 array."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimMismatchError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def l2_normalize_rows(m):
    """Scale every row of ``m`` to unit Euclidean norm.

    Raises
    ------
    ZeroRowError
        If any row has norm below 1e-12.
    """
    m = as_matrix(m)
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    bad = np.flatnonzero(norms < ZERO_NORM)
    if bad.size:
        raise ZeroRowError(f"row {int(bad[0])} has norm {norms[bad[0]]:.3g}")
    return m / norms[:, None]


def is_unit_rows(m, atol=1e-9):
    norms = np.linalg.norm(m, axis=1)
    return bool(np.all(np.abs(norms - 1.0) <= atol))


def cosine_similarity(a, b):
    """Pairwise inner products of two unit-row matrices, shape ``(len(a), len(b))``."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise DimMismatchError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    return a @ b.T
