"""Empirical null distributions, thresholds and p-values."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FingerprintMismatchError, InsufficientTestsError, InvalidInputError, TaskFailedError
from .generators import generator_identity, sample
from .io import read_vector, write_vector
from .linalg import empirical_quantile
from .parallel import run_tasks
from .rng import RngStream, as_stream
from .statistics import StatisticSpec, evaluate

MIN_TESTS = 20


def null_fingerprint(stat: StatisticSpec, generator_ref: str, n: int, m: int) -> str:
    blob = json.dumps(
        {"statistic": stat.to_dict(), "generator": generator_ref, "n": int(n), "m": int(m)},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class NullDistribution:
    sorted_t0: np.ndarray
    fingerprint: str
    generation_seed: int
    statistic_spec: dict
    generator_ref: str
    n: int
    m: int

    def __post_init__(self):
        values = np.sort(np.asarray(self.sorted_t0, dtype=np.float64))
        if values.size < MIN_TESTS:
            raise InsufficientTestsError(f"a null needs at least {MIN_TESTS} tests, got {values.size}")
        object.__setattr__(self, "sorted_t0", values)

    @property
    def n_tests(self) -> int:
        return int(self.sorted_t0.size)

    def header(self) -> dict:
        return {
            "n_tests": self.n_tests,
            "fingerprint": self.fingerprint,
            "seed": self.generation_seed,
            "statistic_spec": self.statistic_spec,
            "generator_ref": self.generator_ref,
            "n": self.n,
            "m": self.m,
        }


def _null_task(args):
    stat, g, n, m, stream = args
    try:
        x = sample(g, n, stream.child("x"))
        y = sample(g, m, stream.child("y"))
        return evaluate(stat, x, y, stream.child("stat"))
    except Exception as exc:
        raise TaskFailedError(f"null test failed on stream {stream.seed_label}: {exc}", seed=stream.seed_label) from exc


def build_null(
    stat: StatisticSpec,
    g,
    n: int,
    m: int,
    n_tests: int,
    rng: RngStream | int | None = None,
    workers: int = 1,
) -> NullDistribution:
    """Evaluate ``stat`` on ``n_tests`` independent reference-vs-reference pairs.

    Test ``i`` draws everything from sub-stream ``("null", i)``.
    """
    if n_tests < MIN_TESTS:
        raise InsufficientTestsError(f"n_tests must be >= {MIN_TESTS}")
    if not stat.resolved or stat.kind == "LLR":
        raise InvalidInputError(f"{stat.kind} must be resolved (and not LLR) to build a shared null")
    stream = as_stream(rng)
    tasks = [(stat, g, n, m, stream.child("null", i)) for i in range(n_tests)]
    values = np.asarray(run_tasks(_null_task, tasks, workers), dtype=np.float64)
    ref = generator_identity(g)
    return NullDistribution(values, null_fingerprint(stat, ref, n, m), stream.master_seed, stat.to_dict(), ref, n, m)


def threshold(null: NullDistribution | np.ndarray, alpha: float) -> float:
    """``t0^alpha``: at most a fraction ``alpha`` of null values lie strictly above."""
    values = null.sorted_t0 if isinstance(null, NullDistribution) else np.sort(np.asarray(null, dtype=np.float64))
    if not 0 < alpha < 1:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    if alpha * values.size < 1 - 1e-9:
        raise InsufficientTestsError(f"alpha={alpha} is below the resolution 1/{values.size} of the null")
    return empirical_quantile(values, 1.0 - alpha)


def p_value(null: NullDistribution | np.ndarray, t: float) -> float:
    """Add-one p-value ``(1 + #{t0 >= t}) / (T + 1)``."""
    values = null.sorted_t0 if isinstance(null, NullDistribution) else np.sort(np.asarray(null, dtype=np.float64))
    above = values.size - int(np.searchsorted(values, t, side="left"))
    return (1 + above) / (values.size + 1)


def save_null(null: NullDistribution, path) -> Path:
    header = null.header()
    header["created_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return write_vector(path, null.sorted_t0, header)


def load_null(path, expected_fingerprint: str | None = None) -> NullDistribution:
    values, header = read_vector(path)
    if expected_fingerprint is not None and header.get("fingerprint") != expected_fingerprint:
        raise FingerprintMismatchError(
            f"{path}: null fingerprint {header.get('fingerprint')} does not match the expected {expected_fingerprint}"
        )
    if values.size != header["n_tests"]:
        raise InvalidInputError(f"{path}: header declares {header['n_tests']} tests, file holds {values.size}")
    return NullDistribution(
        values,
        header["fingerprint"],
        int(header["seed"]),
        header["statistic_spec"],
        header["generator_ref"],
        int(header["n"]),
        int(header["m"]),
    )


def null_plot_data(null: NullDistribution, alphas=(0.32, 0.05, 0.01), bins: int = 50) -> dict:
    """Histogram density, ECDF and threshold markers for a null distribution plot."""
    counts, edges = np.histogram(null.sorted_t0, bins=bins, density=True)
    ecdf = np.arange(1, null.n_tests + 1) / null.n_tests
    marks = {}
    for a in alphas:
        try:
            marks[f"{a:g}"] = threshold(null, a)
        except InsufficientTestsError:
            marks[f"{a:g}"] = None
    return {
        "pdf": {"edges": edges.tolist(), "density": counts.tolist()},
        "cdf": {"t0": null.sorted_t0.tolist(), "F": ecdf.tolist()},
        "thresholds": marks,
    }
