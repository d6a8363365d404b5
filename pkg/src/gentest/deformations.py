"""Epsilon-parameterised alternatives to a reference generator.

Seven deformation kinds map a reference sample ``x`` to a deformed sample ``y``:

==============  =====================================================
MuShift         ``y = x + delta``, one ``delta_I ~ U[-eps, eps]`` per column
SigmaDiag       ``y = mu + c (x - mu)``, one ``c_I ~ U[1, 1 + eps]`` per column
SigmaOffDiag    per-column permutation of ``floor(eps * n)`` rows
PowPlus         ``y = sign(x) |x|^(1 + eps)``
PowMinus        ``y = sign(x) |x|^(1 - eps)``
NormalSmear     ``y = x + N(0, eps)`` per entry
UniformSmear    ``y = x + U[-eps, eps]`` per entry
==============  =====================================================

All nuisance randomness is drawn as eps-free standardised variates and scaled
by ``eps`` afterwards, so draws taken from the same stream at different eps are
coupled (common random numbers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DensityUnavailableError, InvalidEpsilonError, InvalidInputError
from .generators import ReferenceStats, is_parametric, log_pdf, reference_stats
from .rng import RngStream, as_stream

KINDS = (
    "MuShift",
    "SigmaDiag",
    "SigmaOffDiag",
    "PowPlus",
    "PowMinus",
    "NormalSmear",
    "UniformSmear",
)
TRACTABLE_KINDS = ("MuShift", "SigmaDiag", "PowPlus", "PowMinus")
BOUNDED_KINDS = {"SigmaOffDiag": 1.0, "PowMinus": 1.0}


def check_kind(kind: str) -> str:
    if kind not in KINDS:
        raise InvalidInputError(f"unknown deformation kind {kind!r}; expected one of {', '.join(KINDS)}")
    return kind


def check_epsilon(kind: str, epsilon: float) -> float:
    epsilon = float(epsilon)
    if not math.isfinite(epsilon) or epsilon < 0:
        raise InvalidEpsilonError(f"epsilon must be finite and >= 0, got {epsilon}")
    bound = BOUNDED_KINDS.get(kind)
    if bound is not None and epsilon > bound:
        raise InvalidEpsilonError(f"{kind} requires epsilon <= {bound}, got {epsilon}")
    return epsilon


@dataclass(frozen=True)
class DeformationSpec:
    kind: str
    epsilon: float = 0.0

    def __post_init__(self):
        check_kind(self.kind)
        object.__setattr__(self, "epsilon", check_epsilon(self.kind, self.epsilon))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, obj: dict) -> "DeformationSpec":
        return cls(obj["kind"], obj.get("epsilon", 0.0))


@dataclass(frozen=True, eq=False)
class DeformationDraw:
    """Nuisance parameters for one deformed dataset.

    Only the fields relevant to ``kind`` are populated.
    """

    kind: str
    epsilon: float
    n: int
    d: int
    per_dimension_shift: np.ndarray | None = None
    per_dimension_scale: np.ndarray | None = None
    per_dimension_permutation: np.ndarray | None = None  # (d, n) row indices
    exponent: float | None = None
    smear_width: float | None = None
    noise: np.ndarray | None = None  # standardised (n, d) noise for the smear kinds


def _moved_rows(epsilon: float, n: int) -> int:
    k = epsilon * n
    return int(round(k)) if abs(k - round(k)) < 1e-9 else int(math.floor(k))


def draw(spec: DeformationSpec, n: int, d: int, rng: RngStream | int) -> DeformationDraw:
    """Sample the nuisance parameters of ``spec`` for an ``n x d`` dataset."""
    if n < 2 or d < 1:
        raise InvalidInputError(f"need n >= 2 and d >= 1, got n={n}, d={d}")
    kind, eps = spec.kind, check_epsilon(spec.kind, spec.epsilon)
    gen = as_stream(rng).generator()
    if kind == "MuShift":
        return DeformationDraw(kind, eps, n, d, per_dimension_shift=eps * (2.0 * gen.random(d) - 1.0))
    if kind == "SigmaDiag":
        return DeformationDraw(kind, eps, n, d, per_dimension_scale=1.0 + eps * gen.random(d))
    if kind == "SigmaOffDiag":
        k = _moved_rows(eps, n)
        perms = np.tile(np.arange(n), (d, 1))
        for col in range(d):
            # nested in eps: the first k rows of a fixed random order get cycled
            sel = gen.permutation(n)[:k]
            if k > 1:
                perms[col, sel] = np.roll(sel, -1)
        return DeformationDraw(kind, eps, n, d, per_dimension_permutation=perms)
    if kind == "PowPlus":
        return DeformationDraw(kind, eps, n, d, exponent=1.0 + eps)
    if kind == "PowMinus":
        return DeformationDraw(kind, eps, n, d, exponent=1.0 - eps)
    if kind == "NormalSmear":
        return DeformationDraw(kind, eps, n, d, smear_width=eps, noise=gen.standard_normal((n, d)))
    if kind == "UniformSmear":
        return DeformationDraw(kind, eps, n, d, smear_width=eps, noise=2.0 * gen.random((n, d)) - 1.0)
    raise AssertionError(kind)


def _signed_power(x: np.ndarray, a: float) -> np.ndarray:
    return np.sign(x) * np.abs(x) ** a


def apply(dr: DeformationDraw, x, stats: ReferenceStats | None = None) -> np.ndarray:
    """Deform the rows of ``x`` with the drawn nuisance parameters."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != dr.d:
        raise InvalidInputError(f"sample shape {x.shape} does not match draw dimension {dr.d}")
    if dr.kind in ("SigmaOffDiag", "NormalSmear", "UniformSmear") and x.shape[0] != dr.n:
        raise InvalidInputError(f"draw was made for {dr.n} rows, sample has {x.shape[0]}")
    if dr.epsilon == 0.0:
        return x.copy()
    if dr.kind == "MuShift":
        return x + dr.per_dimension_shift
    if dr.kind == "SigmaDiag":
        if stats is None:
            raise InvalidInputError("SigmaDiag needs reference per-dimension means")
        mu = stats.per_dimension_mean
        return mu + dr.per_dimension_scale * (x - mu)
    if dr.kind == "SigmaOffDiag":
        return np.take_along_axis(x, dr.per_dimension_permutation.T, axis=0)
    if dr.kind in ("PowPlus", "PowMinus"):
        return _signed_power(x, dr.exponent)
    if dr.kind in ("NormalSmear", "UniformSmear"):
        return x + dr.smear_width * dr.noise
    raise AssertionError(dr.kind)


def deformed_log_pdf(g, dr: DeformationDraw, pts) -> np.ndarray:
    """Log-density of the deformed generator via change of variables."""
    if not is_parametric(g):
        raise DensityUnavailableError("deformed density needs a parametric reference generator")
    if dr.kind not in TRACTABLE_KINDS:
        raise DensityUnavailableError(f"{dr.kind} has no tractable deformed density")
    y = np.asarray(pts, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if dr.epsilon == 0.0:
        return log_pdf(g, y)
    if dr.kind == "MuShift":
        return log_pdf(g, y - dr.per_dimension_shift)
    if dr.kind == "SigmaDiag":
        mu = reference_stats(g).per_dimension_mean
        c = dr.per_dimension_scale
        return log_pdf(g, mu + (y - mu) / c) - np.log(c).sum()
    a = dr.exponent
    if a <= 0:
        raise DensityUnavailableError(f"{dr.kind} with exponent {a} is not invertible")
    x = _signed_power(y, 1.0 / a)
    with np.errstate(divide="ignore"):
        log_jac = ((1.0 / a - 1.0) * np.log(np.abs(y)) - math.log(a)).sum(axis=1)
    return log_pdf(g, x) + log_jac
