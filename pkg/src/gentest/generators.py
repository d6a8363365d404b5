"""Data sources: Gaussian mixtures, correlated Gaussians and file-backed pools."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import DensityUnavailableError, InvalidInputError, PoolExhaustedError
from .linalg import as_sample, as_symmetric, cholesky
from .rng import RngStream, as_stream

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class MixtureOfGaussians:
    """Mixture of axis-aligned Gaussians.

    ``weights`` has shape ``(q,)``; ``means`` and ``stds`` have shape ``(q, d)``.
    """

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        sd = np.atleast_2d(np.asarray(self.stds, dtype=np.float64))
        if mu.shape != sd.shape or mu.shape[0] != w.shape[0]:
            raise InvalidInputError("mixture weights, means and stds have inconsistent shapes")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidInputError("mixture weights must be positive and sum to 1")
        if np.any(sd <= 0) or not np.all(np.isfinite(sd)) or not np.all(np.isfinite(mu)):
            raise InvalidInputError("mixture stds must be positive and all parameters finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stds", sd)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_dict(self) -> dict:
        return {
            "variant": "MixtureOfGaussians",
            "components": [
                {"weight": float(w), "mean": m.tolist(), "diag_std": s.tolist()}
                for w, m, s in zip(self.weights, self.means, self.stds)
            ],
        }


@dataclass(frozen=True, eq=False)
class CorrelatedGaussian:
    mean: np.ndarray
    covariance: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = as_symmetric(self.covariance, "covariance")
        if cov.shape[0] != mu.shape[0]:
            raise InvalidInputError("mean and covariance dimensions differ")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "chol", cholesky(cov))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def to_dict(self) -> dict:
        return {
            "variant": "CorrelatedGaussian",
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
        }


@dataclass(frozen=True, eq=False)
class EmpiricalPool:
    """A finite pool of rows resampled in place of a parametric generator."""

    pool: np.ndarray
    with_replacement: bool = True
    source_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "pool", as_sample(self.pool, "pool"))

    @property
    def dim(self) -> int:
        return self.pool.shape[1]

    @classmethod
    def from_file(cls, path, with_replacement=True) -> "EmpiricalPool":
        from .io import read_sample

        return cls(read_sample(path), with_replacement, str(path))

    def digest(self) -> str:
        return hashlib.sha256(self.pool.tobytes()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "variant": "EmpiricalPool",
            "source_path": self.source_path,
            "with_replacement": self.with_replacement,
            "pool_digest": self.digest(),
        }


GeneratorSpec = MixtureOfGaussians | CorrelatedGaussian | EmpiricalPool


@dataclass(frozen=True)
class ReferenceStats:
    per_dimension_mean: np.ndarray
    per_dimension_std: np.ndarray


def is_parametric(g) -> bool:
    return isinstance(g, (MixtureOfGaussians, CorrelatedGaussian))


def sample(g, n: int, rng: RngStream | int) -> np.ndarray:
    """Draw ``n`` rows from the generator."""
    if n < 2:
        raise InvalidInputError(f"sample size must be at least 2, got {n}")
    gen = as_stream(rng).generator()
    if isinstance(g, MixtureOfGaussians):
        comp = gen.choice(g.weights.shape[0], size=n, p=g.weights)
        z = gen.standard_normal((n, g.dim))
        return g.means[comp] + g.stds[comp] * z
    if isinstance(g, CorrelatedGaussian):
        z = gen.standard_normal((n, g.dim))
        return g.mean + z @ g.chol.T
    if isinstance(g, EmpiricalPool):
        n_pool = g.pool.shape[0]
        if g.with_replacement:
            idx = gen.integers(0, n_pool, size=n)
        else:
            if n > n_pool:
                raise PoolExhaustedError(f"requested {n} rows from a pool of {n_pool} without replacement")
            idx = gen.permutation(n_pool)[:n]
        return g.pool[idx].copy()
    raise TypeError(f"unknown generator type {type(g).__name__}")


def log_pdf(g, pts) -> np.ndarray:
    """Log-density of every row of ``pts``."""
    x = np.asarray(pts, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if isinstance(g, MixtureOfGaussians):
        z = (x[:, None, :] - g.means[None]) / g.stds[None]
        comp = (
            np.log(g.weights)[None]
            - np.log(g.stds).sum(axis=1)[None]
            - 0.5 * g.dim * _LOG_2PI
            - 0.5 * np.einsum("nqd,nqd->nq", z, z)
        )
        return logsumexp(comp, axis=1)
    if isinstance(g, CorrelatedGaussian):
        from scipy.linalg import solve_triangular

        z = solve_triangular(g.chol, (x - g.mean).T, lower=True)
        return -0.5 * np.einsum("dn,dn->n", z, z) - np.log(np.diag(g.chol)).sum() - 0.5 * g.dim * _LOG_2PI
    if isinstance(g, EmpiricalPool):
        raise DensityUnavailableError("an empirical pool has no closed-form density")
    raise TypeError(f"unknown generator type {type(g).__name__}")


def reference_stats(g, estimate_n: int = 100_000, rng: RngStream | int | None = None) -> ReferenceStats:
    """Per-dimension mean and standard deviation (analytic where possible).

    Pools use population (1/n) moments.
    """
    if estimate_n < 2:
        raise InvalidInputError("estimate_n must be at least 2")
    if isinstance(g, MixtureOfGaussians):
        mean = g.weights @ g.means
        second = g.weights @ (g.stds**2 + g.means**2)
        return ReferenceStats(mean, np.sqrt(np.maximum(second - mean**2, 0.0)))
    if isinstance(g, CorrelatedGaussian):
        return ReferenceStats(g.mean.copy(), np.sqrt(np.diag(g.covariance)))
    if isinstance(g, EmpiricalPool):
        return ReferenceStats(g.pool.mean(axis=0), g.pool.std(axis=0))
    raise TypeError(f"unknown generator type {type(g).__name__}")


# -- serialization and presets -------------------------------------------------


def generator_from_dict(obj: dict):
    variant = obj.get("variant")
    if variant == "MixtureOfGaussians":
        comps = obj["components"]
        return MixtureOfGaussians(
            weights=[c["weight"] for c in comps],
            means=[c["mean"] for c in comps],
            stds=[c["diag_std"] for c in comps],
        )
    if variant == "CorrelatedGaussian":
        return CorrelatedGaussian(obj["mean"], obj["covariance"])
    if variant == "EmpiricalPool":
        if "source_path" not in obj or obj["source_path"] is None:
            raise InvalidInputError("EmpiricalPool config needs a source_path")
        return EmpiricalPool.from_file(obj["source_path"], bool(obj.get("with_replacement", True)))
    raise InvalidInputError(f"unknown generator variant {variant!r}")


def generator_identity(g) -> str:
    """Stable short hash identifying a generator's parameters."""
    blob = json.dumps(g.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


PRESET_SEED = 20250101
_PRESET_LAYOUT = {
    "mog-d5": ("mog", 5, 3),
    "mog-d20": ("mog", 20, 5),
    "mog-d100": ("mog", 100, 10),
    "cg-d5": ("cg", 5, None),
    "cg-d20": ("cg", 20, None),
    "cg-d100": ("cg", 100, None),
}


def build_presets(seed: int = PRESET_SEED) -> dict:
    """Regenerate the named preset registry from a fixed seed.

    Mixture components get means in U[-5, 5] and stds in U[0.5, 1.5]; correlated
    Gaussians get means in U[-1, 1], stds in U[0.5, 2] and a random correlation
    matrix built from a rank-2 Gaussian factor model plus diagonal noise.
    """
    presets = {}
    for name, (family, d, q) in _PRESET_LAYOUT.items():
        gen = RngStream(seed).child("preset", name).generator()
        if family == "mog":
            w = gen.dirichlet(np.full(q, 5.0))
            w = w / w.sum()
            # exact normalisation so the sum check holds after a JSON round-trip
            w[-1] = 1.0 - w[:-1].sum()
            g = MixtureOfGaussians(w, gen.uniform(-5, 5, (q, d)), gen.uniform(0.5, 1.5, (q, d)))
        else:
            factors = gen.standard_normal((d, 2))
            s = factors @ factors.T + np.diag(gen.uniform(0.5, 2.0, d))
            dinv = 1.0 / np.sqrt(np.diag(s))
            corr = s * dinv[:, None] * dinv[None, :]
            std = gen.uniform(0.5, 2.0, d)
            g = CorrelatedGaussian(gen.uniform(-1, 1, d), corr * std[:, None] * std[None, :])
        presets[name] = g.to_dict()
    return presets


def load_presets(path=None) -> dict:
    if path is None:
        text = resources.files("gentest").joinpath("presets.json").read_text()
    else:
        text = Path(path).read_text()
    return json.loads(text)


def preset(name: str, path=None):
    registry = load_presets(path)
    if name not in registry:
        raise InvalidInputError(f"unknown preset {name!r}; available: {', '.join(sorted(registry))}")
    return generator_from_dict(registry[name])


def resolve_generator(ref):
    """Accept a preset name, a config dict, or an already-built generator."""
    if isinstance(ref, str):
        return preset(ref)
    if isinstance(ref, dict):
        return generator_from_dict(ref)
    if isinstance(ref, (MixtureOfGaussians, CorrelatedGaussian, EmpiricalPool)):
        return ref
    raise InvalidInputError(f"cannot build a generator from {type(ref).__name__}")
