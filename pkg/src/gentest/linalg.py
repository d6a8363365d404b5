"""Numerical substrate: sample validation, distances, PSD matrix functions, quantiles."""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial.distance import pdist

from .errors import InvalidInputError, NotPositiveDefiniteError, NotPSDError
from .rng import RngStream, as_stream

DEFAULT_MAX_POINTS = 5000
PSD_TOLERANCE = 1e-10


def as_sample(data, name="sample", min_rows=2) -> np.ndarray:
    """Validate and return ``data`` as a C-contiguous float64 ``(n, d)`` array.

    One-dimensional input is treated as ``n`` points in one dimension.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2-D array, got shape {arr.shape}")
    n, d = arr.shape
    if n < min_rows:
        raise InvalidInputError(f"{name} needs at least {min_rows} rows, got {n}")
    if d < 1:
        raise InvalidInputError(f"{name} needs at least one column")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(arr)


def check_same_dim(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape[1] != y.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")


def as_symmetric(a, name="matrix") -> np.ndarray:
    """Square matrix made exactly symmetric from its lower triangle."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {a.shape}")
    lower = np.tril(a)
    return lower + np.tril(a, -1).T


def pairwise_distances(s, max_points: int = DEFAULT_MAX_POINTS, rng: RngStream | int | None = None) -> np.ndarray:
    """Euclidean distances between all unordered pairs of a row subsample.

    When the sample has more than ``max_points`` rows, ``max_points`` rows are
    drawn uniformly without replacement first; otherwise every row is used.
    """
    if max_points < 2:
        raise InvalidInputError("max_points must be at least 2")
    x = as_sample(s)
    n = x.shape[0]
    if n > max_points:
        idx = as_stream(rng).generator().choice(n, size=max_points, replace=False)
        x = x[np.sort(idx)]
    return pdist(x)


def psd_sqrt(a) -> np.ndarray:
    """Symmetric square root of a positive semi-definite matrix.

    Eigenvalues in ``[-1e-10 * ||a||, 0)`` are treated as round-off and clamped.
    """
    a = as_symmetric(a)
    w, v = np.linalg.eigh(a)
    scale = float(np.max(np.abs(w))) if w.size else 0.0
    if w.size and w.min() < -PSD_TOLERANCE * scale:
        raise NotPSDError(f"matrix is not PSD: smallest eigenvalue {w.min():.3e}")
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (root + root.T)


def empirical_quantile(values, q: float) -> float:
    """Order statistic ``k = ceil(q * T)`` of an ascending vector (1-based, clamped).

    At most a fraction ``1 - q`` of the values strictly exceed the result.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    T = values.size
    if T == 0:
        raise InvalidInputError("empirical_quantile of an empty vector")
    if not 0.0 <= q <= 1.0:
        raise InvalidInputError(f"q must lie in [0, 1], got {q}")
    qt = q * T
    # absorb binary round-off such as 0.95 * 2000 = 1900.0000000000002
    k = round(qt) if abs(qt - round(qt)) < 1e-9 * max(1.0, qt) else math.ceil(qt)
    k = min(max(int(k), 1), T)
    return float(values[k - 1])


def cholesky(a) -> np.ndarray:
    """Lower Cholesky factor ``L`` with ``L @ L.T == a``."""
    a = as_symmetric(a)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"matrix is not positive definite: {exc}") from None
