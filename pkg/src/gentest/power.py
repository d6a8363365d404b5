"""Sensitivity of a statistic: the smallest deformation it detects.

For a deformation kind and significance ``alpha`` three crossings are located
by bisection on eps:

* ``eps_alpha``: mean statistic reaches the threshold,
* ``eps_low``: mean + std reaches it,
* ``eps_up``: mean - std reaches it.

The mean and std at each probed eps come from ``repeats`` alternative tests.
Repeat ``r`` uses the same sub-stream at every eps (common random numbers), so
the estimated response curve is smooth in eps and bisection noise stays low.
All probes are cached and shared between the three searches and across alphas.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .calibration import NullDistribution, threshold
from .deformations import BOUNDED_KINDS, TRACTABLE_KINDS, DeformationSpec, apply, check_kind, deformed_log_pdf, draw
from .errors import BisectionError, InvalidInputError, TaskFailedError, UnsupportedDeformationError
from .generators import is_parametric, log_pdf, reference_stats, sample
from .parallel import run_tasks
from .rng import RngStream, as_stream
from .statistics import StatisticSpec, evaluate, llr_statistic

log = logging.getLogger(__name__)

DEFAULT_CAP = 10.0
LLR_POWMINUS_CAP = 0.99


@dataclass
class StatEstimate:
    epsilon: float
    mean_t: float
    std_t: float
    repeats: int
    null_t0: np.ndarray | None = field(default=None, repr=False)  # eps-specific null (LLR)

    def __post_init__(self):
        if self.repeats < 2:
            raise InvalidInputError("a StatEstimate needs at least 2 repeats")

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "mean_t": self.mean_t, "std_t": self.std_t}


@dataclass(frozen=True)
class BisectionConfig:
    eps_start: float = 0.1
    eps_cap: float | None = None
    rel_tol: float = 1e-2
    max_steps: int = 60

    def cap_for(self, kind: str) -> float:
        if self.eps_cap is not None:
            return min(self.eps_cap, BOUNDED_KINDS.get(kind, math.inf))
        return BOUNDED_KINDS.get(kind, DEFAULT_CAP)

    @classmethod
    def from_dict(cls, obj: dict | None) -> "BisectionConfig":
        obj = obj or {}
        return cls(
            eps_start=float(obj.get("eps_start", 0.1)),
            eps_cap=obj.get("eps_cap"),
            rel_tol=float(obj.get("rel_tol", 1e-2)),
            max_steps=int(obj.get("max_steps", 60)),
        )


@dataclass
class EpsilonScanResult:
    alpha: float
    eps_alpha: float
    eps_low: float
    eps_up: float
    trace: list
    threshold_used: float | dict
    statistic: dict | None = None
    deformation: str | None = None
    repeats: int = 0
    cap: float = DEFAULT_CAP
    brackets: dict = field(default_factory=dict)
    wall_time_seconds: float = 0.0

    @property
    def insensitive(self) -> bool:
        return math.isinf(self.eps_alpha)

    def to_dict(self) -> dict:
        def enc(v):
            return None if math.isinf(v) else v

        thr = self.threshold_used
        if isinstance(thr, dict):
            thr = [{"epsilon": e, "threshold": t} for e, t in sorted(thr.items())]
        return {
            "statistic": self.statistic,
            "deformation": self.deformation,
            "alpha": self.alpha,
            "eps_alpha": enc(self.eps_alpha),
            "eps_low": enc(self.eps_low),
            "eps_up": enc(self.eps_up),
            "insensitive": self.insensitive,
            "cap": self.cap,
            "repeats": self.repeats,
            "threshold": thr,
            "brackets": self.brackets,
            "wall_time_seconds": self.wall_time_seconds,
            "trace": [e.to_dict() for e in self.trace],
        }


# -- repeated evaluation ----------------------------------------------------------


def _alternative_task(args):
    stat, g, spec, n, m, stats, stream = args
    try:
        base = sample(g, m, stream.child("y"))
        dr = draw(spec, m, base.shape[1], stream.child("deform"))
        y = apply(dr, base, stats)
        if stat.kind == "LLR":
            return llr_statistic(y, lambda p: log_pdf(g, p), lambda p: deformed_log_pdf(g, dr, p))
        x = sample(g, n, stream.child("x"))
        return evaluate(stat, x, y, stream.child("stat"))
    except Exception as exc:
        raise TaskFailedError(f"alternative test failed on stream {stream.seed_label}: {exc}", seed=stream.seed_label) from exc


def _llr_null_task(args):
    g, spec, m, stream = args
    try:
        y = sample(g, m, stream.child("y"))
        dr = draw(spec, m, y.shape[1], stream.child("deform"))
        return llr_statistic(y, lambda p: log_pdf(g, p), lambda p: deformed_log_pdf(g, dr, p))
    except Exception as exc:
        raise TaskFailedError(f"LLR null test failed on stream {stream.seed_label}: {exc}", seed=stream.seed_label) from exc


def _summarise(eps, values) -> StatEstimate:
    values = np.asarray(values, dtype=np.float64)
    return StatEstimate(float(eps), float(values.mean()), float(values.std(ddof=1)), int(values.size))


def estimate_at(
    stat: StatisticSpec,
    g,
    deformation: DeformationSpec,
    n: int,
    m: int,
    repeats: int = 100,
    rng: RngStream | int | None = None,
    workers: int = 1,
) -> StatEstimate:
    """Mean and (n-1)-std of the statistic when ``y`` comes from the deformed generator."""
    if repeats < 2:
        raise InvalidInputError("repeats must be >= 2")
    if stat.kind == "LLR" and (deformation.kind not in TRACTABLE_KINDS or not is_parametric(g)):
        raise UnsupportedDeformationError(f"LLR is unavailable for {deformation.kind}")
    stream = as_stream(rng)
    stats = reference_stats(g)
    tasks = [(stat, g, deformation, n, m, stats, stream.child("repeat", r)) for r in range(repeats)]
    return _summarise(deformation.epsilon, run_tasks(_alternative_task, tasks, workers))


def llr_null(g, deformation: DeformationSpec, m: int, n_tests: int, rng: RngStream | int | None = None, workers: int = 1) -> np.ndarray:
    """Sorted LLR values with ``y`` from the reference and ``q`` the eps-deformed density."""
    stream = as_stream(rng)
    tasks = [(g, deformation, m, stream.child("llr-null", i)) for i in range(n_tests)]
    return np.sort(np.asarray(run_tasks(_llr_null_task, tasks, workers), dtype=np.float64))


# -- bisection ----------------------------------------------------------------------------

_OFFSETS = {"eps_low": 1.0, "eps_alpha": 0.0, "eps_up": -1.0}


def _find_crossing(h, cache: dict, cap: float, cfg: BisectionConfig, allow_zero: bool):
    """Smallest eps in [0, cap] where ``h`` turns positive, to relative width ``rel_tol``."""
    if h(0.0) > 0:
        if allow_zero:
            return 0.0, (0.0, 0.0)
        raise BisectionError("statistic already exceeds the threshold at eps = 0", trace=sorted(cache))
    crossed = sorted(e for e in cache if e > 0 and h(e) > 0)
    if crossed:
        hi = crossed[0]
    else:
        below = [e for e in cache if 0 < e <= cap]
        e = min(max(below) * 2.0, cap) if below else min(cfg.eps_start, cap)
        while h(e) <= 0:
            if e >= cap:
                return math.inf, (e, math.inf)
            e = min(2.0 * e, cap)
        hi = e
    lo = max(e for e in cache if e < hi and h(e) <= 0)
    for _ in range(cfg.max_steps):
        if hi - lo <= cfg.rel_tol * hi:
            break
        mid = 0.5 * (lo + hi)
        if h(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi), (lo, hi)


def bisect_band(probe, threshold_at, cap: float, search: BisectionConfig | None = None, cache: dict | None = None) -> dict:
    """Solve the three crossings for a response curve.

    ``probe(eps)`` returns a :class:`StatEstimate`; ``threshold_at(estimate)``
    returns the threshold to compare with. Results are memoised in ``cache``.
    """
    cfg = search or BisectionConfig()
    cache = {} if cache is None else cache

    def get(eps):
        eps = float(eps)
        if eps not in cache:
            cache[eps] = probe(eps)
        return cache[eps]

    out, brackets = {}, {}
    for name in ("eps_alpha", "eps_low", "eps_up"):
        k = _OFFSETS[name]

        def h(eps, k=k):
            est = get(eps)
            return est.mean_t + k * est.std_t - threshold_at(est)

        root, bracket = _find_crossing(h, cache, cap, cfg, allow_zero=name != "eps_alpha")
        out[name] = root
        brackets[name] = [bracket[0], None if math.isinf(bracket[1]) else bracket[1]]
    # independent bisections can cross by less than their tolerance; restore the order
    out["eps_low"] = min(out["eps_low"], out["eps_alpha"])
    out["eps_up"] = max(out["eps_up"], out["eps_alpha"])
    out["brackets"] = brackets
    return out


def bisect_epsilon(
    stat: StatisticSpec,
    g,
    kind: str,
    alpha: float,
    null: NullDistribution,
    search: BisectionConfig | None = None,
    rng: RngStream | int | None = None,
    repeats: int = 100,
    cache: dict | None = None,
    workers: int = 1,
) -> EpsilonScanResult:
    """Critical deformation of a statistic against a shared (eps-independent) null.

    Sample sizes are taken from ``null``. Pass the same ``cache`` to scans of
    several alphas on one (statistic, kind) cell to reuse every probe.
    """
    check_kind(kind)
    if stat.kind == "LLR":
        raise InvalidInputError("LLR has an eps-dependent null; use bisect_epsilon_llr")
    search = search or BisectionConfig()
    stream = as_stream(rng)
    thr = threshold(null, alpha)
    cap = search.cap_for(kind)
    start = time.perf_counter()

    def probe(eps):
        return estimate_at(stat, g, DeformationSpec(kind, eps), null.n, null.m, repeats, stream, workers)

    cache = {} if cache is None else cache
    roots = bisect_band(probe, lambda est: thr, cap, search, cache)
    return EpsilonScanResult(
        alpha=alpha,
        eps_alpha=roots["eps_alpha"],
        eps_low=roots["eps_low"],
        eps_up=roots["eps_up"],
        trace=[cache[e] for e in sorted(cache)],
        threshold_used=thr,
        statistic=stat.to_dict(),
        deformation=kind,
        repeats=repeats,
        cap=cap,
        brackets=roots["brackets"],
        wall_time_seconds=time.perf_counter() - start,
    )


def bisect_epsilon_llr(
    g,
    kind: str,
    alpha: float,
    n: int,
    m: int,
    search: BisectionConfig | None = None,
    null_tests_per_eps: int = 500,
    rng: RngStream | int | None = None,
    repeats: int = 100,
    cache: dict | None = None,
    workers: int = 1,
) -> EpsilonScanResult:
    """Critical deformation of the exact likelihood ratio.

    Each probed eps gets its own null: LLR values with the eps-deformed density
    in the denominator, evaluated on reference samples.
    """
    check_kind(kind)
    if kind not in TRACTABLE_KINDS:
        raise UnsupportedDeformationError(f"LLR is unavailable for {kind}: the deformed density is intractable")
    if not is_parametric(g):
        raise UnsupportedDeformationError("LLR needs a generator with a known density")
    search = search or BisectionConfig()
    stream = as_stream(rng)
    stat = StatisticSpec("LLR")
    cap = search.cap_for(kind)
    if kind == "PowMinus":
        # exponent 1 - eps must stay positive for the inverse map to exist
        cap = min(cap, LLR_POWMINUS_CAP)
    start = time.perf_counter()

    def probe(eps):
        spec = DeformationSpec(kind, eps)
        est = estimate_at(stat, g, spec, n, m, repeats, stream, workers)
        est.null_t0 = llr_null(g, spec, m, null_tests_per_eps, stream, workers)
        return est

    cache = {} if cache is None else cache
    roots = bisect_band(probe, lambda est: threshold(est.null_t0, alpha), cap, search, cache)
    return EpsilonScanResult(
        alpha=alpha,
        eps_alpha=roots["eps_alpha"],
        eps_low=roots["eps_low"],
        eps_up=roots["eps_up"],
        trace=[cache[e] for e in sorted(cache)],
        threshold_used={e: threshold(cache[e].null_t0, alpha) for e in sorted(cache)},
        statistic=stat.to_dict(),
        deformation=kind,
        repeats=repeats,
        cap=cap,
        brackets=roots["brackets"],
        wall_time_seconds=time.perf_counter() - start,
    )
