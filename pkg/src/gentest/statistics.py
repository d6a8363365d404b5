"""Two-sample test statistics.

Each statistic maps two samples ``x`` (n x d) and ``y`` (m x d) to a real
number; large values signal a discrepancy. The sliced statistics draw their
projection directions from the stream they are given, so slice noise is part
of their null distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateBandwidthError, InvalidInputError, NumericError
from .linalg import as_sample, check_same_dim, pairwise_distances, psd_sqrt
from .rng import RngStream, as_stream

KINDS = ("SW", "KSbar", "SKS", "FGD", "MMD", "LLR", "NPLM")
DEFAULT_SLICES = 100


@dataclass(frozen=True)
class StatisticSpec:
    """Declarative description of a statistic.

    ``mmd_bandwidth=None`` means the median heuristic, resolved once per
    experiment; ``nplm=None`` means hyperparameters are resolved by tuning.
    """

    kind: str
    n_slices: int = DEFAULT_SLICES
    mmd_bandwidth: float | None = None
    nplm: "NplmHyperparams | None" = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown statistic {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.n_slices < 1:
            raise InvalidInputError("n_slices must be >= 1")
        if self.mmd_bandwidth is not None and not self.mmd_bandwidth > 0:
            raise InvalidInputError("fixed MMD bandwidth must be > 0")

    @property
    def resolved(self) -> bool:
        if self.kind == "MMD":
            return self.mmd_bandwidth is not None
        if self.kind == "NPLM":
            return self.nplm is not None
        return True

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind in ("SW", "SKS"):
            out["n_slices"] = self.n_slices
        if self.kind == "MMD":
            if self.mmd_bandwidth is None:
                out["mmd_bandwidth"] = {"policy": "median"}
            else:
                out["mmd_bandwidth"] = {"policy": "fixed", "value": float(self.mmd_bandwidth)}
        if self.kind == "NPLM" and self.nplm is not None:
            out["nplm"] = self.nplm.to_dict()
        return out

    @classmethod
    def from_dict(cls, obj) -> "StatisticSpec":
        from .nplm import NplmHyperparams

        if isinstance(obj, str):
            return cls(obj)
        bw = obj.get("mmd_bandwidth")
        bandwidth = None
        if isinstance(bw, dict) and bw.get("policy", "median") == "fixed":
            bandwidth = float(bw["value"])
        elif isinstance(bw, (int, float)):
            bandwidth = float(bw)
        hp = obj.get("nplm")
        return cls(
            kind=obj["kind"],
            n_slices=int(obj.get("n_slices", DEFAULT_SLICES)),
            mmd_bandwidth=bandwidth,
            nplm=NplmHyperparams.from_dict(hp) if hp else None,
        )

    def with_bandwidth(self, bandwidth: float) -> "StatisticSpec":
        return replace(self, mmd_bandwidth=float(bandwidth))


def random_directions(d: int, n_slices: int, rng: RngStream | int) -> np.ndarray:
    """``n_slices`` directions uniform on the unit sphere, shape ``(n_slices, d)``."""
    v = as_stream(rng).generator().standard_normal((n_slices, d))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / norms


# -- one-dimensional building blocks ------------------------------------------


def _ks_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact two-sample KS distance for each row pair of ``a`` (S, n) and ``b`` (S, m).

    Works in integer arithmetic: at each distinct value the ECDF gap is
    ``|m * count_a - n * count_b| / (n m)``.
    """
    n, m = a.shape[1], b.shape[1]
    z = np.concatenate([a, b], axis=1)
    order = np.argsort(z, axis=1, kind="stable")
    zs = np.take_along_axis(z, order, axis=1)
    steps = np.where(order < n, m, -n).astype(np.int64)
    gap = np.abs(np.cumsum(steps, axis=1))
    # only the last position of each run of tied values is an ECDF evaluation point
    last = np.ones_like(zs, dtype=bool)
    last[:, :-1] = zs[:, 1:] != zs[:, :-1]
    best = np.where(last, gap, 0).max(axis=1)
    return best / float(n * m)


def ks_1d(x, y) -> float:
    """Sup-norm distance between the empirical CDFs of two 1-D samples."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size == 0 or y.size == 0:
        raise InvalidInputError("ks_1d needs non-empty inputs")
    return float(_ks_rows(x[None], y[None])[0])


def _w1_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Wasserstein-1 distance per row, via the quantile-function integral."""
    a = np.sort(a, axis=1)
    b = np.sort(b, axis=1)
    n, m = a.shape[1], b.shape[1]
    if n == m:
        return np.abs(a - b).mean(axis=1)
    # merged grid of quantile levels; on each cell both quantile functions are constant
    levels = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    levels = np.concatenate([[0.0], levels])
    widths = np.diff(levels)
    mid = 0.5 * (levels[1:] + levels[:-1])
    ia = np.minimum((mid * n).astype(np.int64), n - 1)
    ib = np.minimum((mid * m).astype(np.int64), m - 1)
    return (np.abs(a[:, ia] - b[:, ib]) * widths).sum(axis=1)


def wasserstein_1d(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size == 0 or y.size == 0:
        raise InvalidInputError("wasserstein_1d needs non-empty inputs")
    return float(_w1_rows(x[None], y[None])[0])


# -- statistics -----------------------------------------------------------------


def _pair(x, y, min_rows=1):
    x = as_sample(x, "x", min_rows=min_rows)
    y = as_sample(y, "y", min_rows=min_rows)
    check_same_dim(x, y)
    return x, y


def sw_statistic(x, y, n_slices: int = DEFAULT_SLICES, rng: RngStream | int | None = None, directions=None) -> float:
    """Sliced Wasserstein-1 distance, averaged over random unit directions."""
    x, y = _pair(x, y)
    if directions is None:
        directions = random_directions(x.shape[1], n_slices, as_stream(rng))
    return float(_w1_rows(directions @ x.T, directions @ y.T).mean())


def ks_bar(x, y) -> float:
    """Mean of the per-coordinate KS distances."""
    x, y = _pair(x, y)
    return float(_ks_rows(x.T, y.T).mean())


def sks_statistic(x, y, n_slices: int = DEFAULT_SLICES, rng: RngStream | int | None = None, directions=None) -> float:
    """Sliced KS: mean KS distance of random 1-D projections."""
    x, y = _pair(x, y)
    if directions is None:
        directions = random_directions(x.shape[1], n_slices, as_stream(rng))
    return float(_ks_rows(directions @ x.T, directions @ y.T).mean())


def fgd_from_moments(mu_x, cov_x, mu_y, cov_y) -> float:
    mu_x, mu_y = np.atleast_1d(mu_x), np.atleast_1d(mu_y)
    cov_x, cov_y = np.atleast_2d(cov_x), np.atleast_2d(cov_y)
    root_x = psd_sqrt(cov_x)
    # Tr sqrt(Sx Sy) = Tr sqrt(Sx^1/2 Sy Sx^1/2), the latter symmetric PSD
    cross = psd_sqrt(root_x @ cov_y @ root_x)
    diff = mu_x - mu_y
    value = diff @ diff + np.trace(cov_x) + np.trace(cov_y) - 2.0 * np.trace(cross)
    return max(float(value), 0.0)


def fgd_statistic(x, y) -> float:
    """Frechet distance between Gaussians fitted to ``x`` and ``y``."""
    x, y = _pair(x, y, min_rows=2)
    return fgd_from_moments(
        x.mean(axis=0), np.cov(x, rowvar=False), y.mean(axis=0), np.cov(y, rowvar=False)
    )


def gaussian_gram(a: np.ndarray, b: np.ndarray, bandwidth: float) -> np.ndarray:
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * bandwidth * bandwidth))


def mmd_statistic(x, y, bandwidth: float) -> float:
    """Unbiased squared MMD with a Gaussian kernel; can be negative."""
    if not bandwidth > 0:
        raise InvalidInputError(f"bandwidth must be > 0, got {bandwidth}")
    x, y = _pair(x, y, min_rows=2)
    n, m = x.shape[0], y.shape[0]
    kxx = gaussian_gram(x, x, bandwidth)
    kyy = gaussian_gram(y, y, bandwidth)
    kxy = gaussian_gram(x, y, bandwidth)
    np.fill_diagonal(kxx, 0.0)
    np.fill_diagonal(kyy, 0.0)
    return float(kxx.sum() / (n * (n - 1)) + kyy.sum() / (m * (m - 1)) - 2.0 * kxy.sum() / (n * m))


def median_heuristic_bandwidth(x, y, rng: RngStream | int | None = None, max_points: int = 5000) -> float:
    """Median pairwise distance of the pooled sample."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64).reshape(len(x), -1))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64).reshape(len(y), -1))
    check_same_dim(x, y)
    dist = pairwise_distances(np.vstack([x, y]), max_points=max_points, rng=rng)
    bandwidth = float(np.median(dist))
    if not bandwidth > 0:
        raise DegenerateBandwidthError("median pairwise distance is zero; points coincide")
    return bandwidth


def llr_statistic(y, log_p, log_q) -> float:
    """``-2 sum_y log(p(y) / q(y))``; depends on ``y`` only."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    lp = np.asarray(log_p(y), dtype=np.float64)
    lq = np.asarray(log_q(y), dtype=np.float64)
    bad = ~(np.isfinite(lp) & np.isfinite(lq))
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise NumericError(f"non-finite log-density at row {row}", row=row)
    return float(-2.0 * np.sum(lp - lq))


def evaluate(spec: StatisticSpec, x, y, rng: RngStream | int | None = None) -> float:
    """Evaluate a resolved non-LLR statistic on one pair of samples."""
    kind = spec.kind
    if kind == "SW":
        return sw_statistic(x, y, spec.n_slices, rng)
    if kind == "KSbar":
        return ks_bar(x, y)
    if kind == "SKS":
        return sks_statistic(x, y, spec.n_slices, rng)
    if kind == "FGD":
        return fgd_statistic(x, y)
    if kind == "MMD":
        if spec.mmd_bandwidth is None:
            raise InvalidInputError("MMD bandwidth must be resolved before evaluation")
        return mmd_statistic(x, y, spec.mmd_bandwidth)
    if kind == "NPLM":
        from .nplm import nplm_test

        if spec.nplm is None:
            raise InvalidInputError("NPLM hyperparameters must be resolved before evaluation")
        return nplm_test(x, y, spec.nplm, rng)
    if kind == "LLR":
        raise InvalidInputError("LLR needs explicit densities; use llr_statistic")
    raise AssertionError(kind)
