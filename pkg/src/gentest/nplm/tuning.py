"""Hyperparameter selection on reference data only."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from ..errors import DegenerateBandwidthError, InvalidInputError
from ..generators import sample
from ..linalg import DEFAULT_MAX_POINTS, pairwise_distances
from ..rng import RngStream, as_stream
from .model import NplmHyperparams, SolverConfig, nplm_test

log = logging.getLogger(__name__)

MAX_BINS = 1000
SMOOTH_BINS = 5
PEAK_FRACTION = 0.05
PLATEAU_REL = 0.05


@dataclass
class DistanceHistogram:
    edges: np.ndarray
    counts: np.ndarray
    peaks: list = field(default_factory=list)  # bin indices of detected modes
    valley: int | None = None  # bin index of the first inter-peak minimum

    def to_dict(self) -> dict:
        return {
            "edges": self.edges.tolist(),
            "counts": self.counts.tolist(),
            "peaks": [int(p) for p in self.peaks],
            "valley": None if self.valley is None else int(self.valley),
        }


def _modes(counts: np.ndarray):
    kernel = np.ones(SMOOTH_BINS) / SMOOTH_BINS
    smooth = np.convolve(counts.astype(np.float64), kernel, mode="same")
    top = smooth.max()
    # zero padding: the histogram of distances is empty below its first edge and
    # above its last, so a mode touching either edge still counts as a peak
    padded = np.concatenate([[0.0], smooth, [0.0]])
    peaks, _ = find_peaks(padded, height=PEAK_FRACTION * top, prominence=PEAK_FRACTION * top)
    peaks = list(peaks - 1)
    valley = None
    if len(peaks) >= 2:
        a, b = peaks[0], peaks[1]
        valley = int(a + np.argmin(smooth[a : b + 1]))
    return peaks, valley


def tune_sigma(reference, percentile: float = 0.9, rng: RngStream | int | None = None, max_points: int = DEFAULT_MAX_POINTS):
    """Kernel width from the pairwise-distance distribution of reference data.

    Returns ``(sigma, histogram)``. With a single mode, sigma is the
    ``percentile`` quantile of all distances; with several modes it is the same
    quantile of the distances below the valley that closes the first mode.
    """
    if not 0 < percentile < 1:
        raise InvalidInputError("percentile must lie in (0, 1)")
    dist = pairwise_distances(reference, max_points=max_points, rng=rng)
    if dist.max() <= 0:
        raise DegenerateBandwidthError("all reference points coincide")
    edges = np.histogram_bin_edges(dist, bins="fd")
    if edges.size - 1 > MAX_BINS or edges.size < 2:
        edges = np.histogram_bin_edges(dist, bins=MAX_BINS)
    counts, edges = np.histogram(dist, bins=edges)
    peaks, valley = _modes(counts)
    hist = DistanceHistogram(edges, counts, peaks, valley)
    if valley is None:
        return float(np.quantile(dist, percentile)), hist
    cut = 0.5 * (edges[valley] + edges[valley + 1])
    first = dist[dist <= cut]
    return float(np.quantile(first, percentile)), hist


@dataclass
class GridCell:
    m_centers: int
    lam: float
    mean_t0: float
    std_t0: float
    mean_wall_time_seconds: float
    t0: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "m_centers": self.m_centers,
            "lambda": self.lam,
            "mean_t0": self.mean_t0,
            "std_t0": self.std_t0,
            "mean_wall_time_seconds": self.mean_wall_time_seconds,
        }


@dataclass
class TuningReport:
    sigma_chosen: float
    distance_histogram: DistanceHistogram | None
    grid: list
    chosen: tuple  # (m_centers, lambda)
    n: int = 0
    m: int = 0
    notes: list = field(default_factory=list)
    d: int = 0

    @property
    def hyperparams(self) -> NplmHyperparams:
        return NplmHyperparams(self.sigma_chosen, self.chosen[0], self.chosen[1])

    def to_dict(self) -> dict:
        return {
            "sigma_chosen": self.sigma_chosen,
            "chosen": {"m_centers": self.chosen[0], "lambda": self.chosen[1]},
            "n": self.n,
            "m": self.m,
            "d": self.d,
            "lambda_convention": "lambda multiplies w' K_MM w added to the mean loss",
            "grid": [c.to_dict() for c in self.grid],
            "distance_histogram": None if self.distance_histogram is None else self.distance_histogram.to_dict(),
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def grid_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["m_centers", "lambda", "mean_t0", "std_t0", "mean_wall_time_seconds"])
        for c in self.grid:
            writer.writerow([c.m_centers, repr(c.lam), repr(c.mean_t0), repr(c.std_t0), repr(c.mean_wall_time_seconds)])
        return buf.getvalue()

    @classmethod
    def from_dict(cls, obj: dict) -> "TuningReport":
        grid = [
            GridCell(c["m_centers"], c["lambda"], c["mean_t0"], c["std_t0"], c["mean_wall_time_seconds"])
            for c in obj["grid"]
        ]
        hist = obj.get("distance_histogram")
        if hist is not None:
            hist = DistanceHistogram(np.asarray(hist["edges"]), np.asarray(hist["counts"]), hist["peaks"], hist["valley"])
        chosen = (int(obj["chosen"]["m_centers"]), float(obj["chosen"]["lambda"]))
        return cls(obj["sigma_chosen"], hist, grid, chosen, obj.get("n", 0), obj.get("m", 0), obj.get("notes", []), obj.get("d", 0))


def plateau_m(cells: list) -> int:
    """Smallest M whose mean statistic is stable against the next larger M.

    Stable means a relative change below 5% with overlapping one-std bands.
    Falls back to the largest M when no pair qualifies.
    """
    cells = sorted(cells, key=lambda c: c.m_centers)
    for a, b in zip(cells, cells[1:]):
        rel = abs(a.mean_t0 - b.mean_t0) / max(abs(b.mean_t0), 1e-300)
        overlap = abs(a.mean_t0 - b.mean_t0) <= a.std_t0 + b.std_t0
        if rel < PLATEAU_REL and overlap:
            return a.m_centers
    return cells[-1].m_centers


def choose_cell(grid: list, time_budget: float | None = None) -> tuple:
    """Pick ``(M, lambda)``: the smallest affordable lambda, then the plateau M."""
    lams = sorted({c.lam for c in grid})
    chosen_lam = None
    for lam in lams:
        cells = [c for c in grid if c.lam == lam]
        m_star = plateau_m(cells)
        cost = next(c.mean_wall_time_seconds for c in cells if c.m_centers == m_star)
        if time_budget is None or cost <= time_budget:
            chosen_lam = lam
            break
    if chosen_lam is None:
        chosen_lam = lams[-1]
    return plateau_m([c for c in grid if c.lam == chosen_lam]), chosen_lam


def scan_m_lambda(
    reference,
    n: int,
    m: int,
    sigma: float,
    m_grid,
    lambda_grid,
    repeats: int = 20,
    rng: RngStream | int | None = None,
    time_budget: float | None = None,
    solver: SolverConfig | None = None,
    histogram: DistanceHistogram | None = None,
) -> TuningReport:
    """Null-hypothesis statistic and cost over a grid of ``(M, lambda)``.

    Every cell runs ``repeats`` reference-vs-reference tests; the r-th test in
    every cell sees the same pair of samples.
    """
    m_grid = sorted(int(v) for v in m_grid)
    lambda_grid = sorted(float(v) for v in lambda_grid)
    if not m_grid or not lambda_grid:
        raise InvalidInputError("M and lambda grids must be non-empty")
    if any(v <= 0 for v in lambda_grid):
        raise InvalidInputError("lambda grid values must be positive")
    if repeats < 2:
        raise InvalidInputError("repeats must be >= 2")
    stream = as_stream(rng)
    notes = []
    floor = math.ceil(math.sqrt(n + m))
    low = [v for v in m_grid if v < floor]
    if low:
        msg = f"M values {low} are below the sqrt(n+m) floor of {floor}"
        log.warning(msg)
        notes.append(msg)
    pairs = []
    for r in range(repeats):
        s = stream.child("tune", r)
        pairs.append((sample(reference, n, s.child("x")), sample(reference, m, s.child("y")), s.child("stat")))
    grid = []
    for lam in lambda_grid:
        for mc in m_grid:
            hp = NplmHyperparams(sigma, mc, lam)
            values, times = [], []
            for x, y, s in pairs:
                start = time.perf_counter()
                values.append(nplm_test(x, y, hp, s, solver))
                times.append(time.perf_counter() - start)
            values = np.asarray(values)
            grid.append(GridCell(mc, lam, float(values.mean()), float(values.std(ddof=1)), float(np.mean(times)), values.tolist()))
    chosen = choose_cell(grid, time_budget)
    return TuningReport(sigma, histogram, grid, chosen, n, m, notes, pairs[0][0].shape[1])
