"""Experiment orchestration: tune, calibrate, scan and report under one directory.

Everything a command produces lands under ``output_dir`` and is listed in
``manifest.json``. Artifacts are keyed by fingerprints of the inputs that
determine them, so re-running a command with an unchanged configuration reuses
what is already on disk, and a killed scan resumes from its finished cells.
Timings live in separate ``*.timing.json`` files and in the manifest's
``timings`` section; every other byte is a function of the configuration.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import NullDistribution, build_null, load_null, null_fingerprint, null_plot_data, save_null, threshold
from .deformations import KINDS as DEFORMATION_KINDS
from .deformations import TRACTABLE_KINDS, check_kind
from .errors import GentestError, InvalidInputError, UnsupportedDeformationError
from .generators import generator_identity, is_parametric, resolve_generator, sample
from .nplm import NplmHyperparams, TuningReport, scan_m_lambda, tune_sigma
from .parallel import default_workers
from .power import BisectionConfig, EpsilonScanResult, bisect_epsilon, bisect_epsilon_llr
from .rng import RngStream
from .statistics import StatisticSpec, median_heuristic_bandwidth

log = logging.getLogger(__name__)

DEFAULT_STATISTICS = ("SW", "KSbar", "SKS", "FGD", "MMD", "NPLM")
DEFAULT_NPLM_CENTERS = 300
DEFAULT_NPLM_LAMBDA = 1e-6


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


@dataclass
class TuningConfig:
    percentile: float = 0.9
    m_grid: list | None = None  # default: multiples of the sqrt(n + m) floor
    lambda_grid: list = field(default_factory=lambda: [1e-5, 1e-6, 1e-7])
    repeats: int = 20
    time_budget: float | None = None
    report: str | None = None  # reuse a report from an earlier, compatible run


@dataclass
class ExperimentConfig:
    generator: str | dict = "cg-d5"
    n: int = 1000
    m: int = 1000
    statistics: list = field(default_factory=lambda: list(DEFAULT_STATISTICS))
    deformations: list = field(default_factory=lambda: list(DEFORMATION_KINDS))
    alphas: list = field(default_factory=lambda: [0.05, 0.01])
    null_tests: int = 1000
    llr_null_tests: int | None = None  # per probed eps; defaults to null_tests
    repeats: int = 100
    master_seed: int = 0
    output_dir: str = "gentest-run"
    workers: int | None = None
    search: dict = field(default_factory=dict)
    tuning: TuningConfig = field(default_factory=TuningConfig)
    nplm_centers: int = DEFAULT_NPLM_CENTERS
    nplm_lambda: float = DEFAULT_NPLM_LAMBDA

    def __post_init__(self):
        if isinstance(self.tuning, dict):
            self.tuning = TuningConfig(**self.tuning)
        self.statistics = [s if isinstance(s, (str, dict)) else s.to_dict() for s in self.statistics]
        if not self.statistics:
            raise InvalidInputError("at least one statistic is required")
        if not self.deformations:
            raise InvalidInputError("at least one deformation is required")
        for kind in self.deformations:
            check_kind(kind)
        for spec in self.statistics:
            StatisticSpec.from_dict(spec)
        self.alphas = [float(a) for a in self.alphas]
        if not all(0 < a < 1 for a in self.alphas):
            raise InvalidInputError("alphas must lie in (0, 1)")
        if self.n < 2 or self.m < 2:
            raise InvalidInputError("sample sizes must be >= 2")
        if self.repeats < 2:
            raise InvalidInputError("repeats must be >= 2")
        for tests in {self.null_tests, self.llr_null_tests or self.null_tests}:
            if min(self.alphas) * tests < 1:
                raise InvalidInputError(f"{tests} null tests cannot resolve alpha={min(self.alphas)}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise InvalidInputError("master_seed must be a 64-bit unsigned integer")
        BisectionConfig.from_dict(self.search)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        if "sample_sizes" in obj:
            obj["n"], obj["m"] = obj.pop("sample_sizes")
        if "worker_count" in obj:
            obj["workers"] = obj.pop("worker_count")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(obj) - known)
        if unknown:
            raise InvalidInputError(f"unknown config fields: {', '.join(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: invalid JSON ({exc})") from exc

    def to_dict(self) -> dict:
        out = asdict(self)
        out["tuning"] = asdict(self.tuning)
        return out

    def config_hash(self) -> str:
        """Hash of every field that affects results (not paths or worker counts)."""
        obj = self.to_dict()
        for key in ("output_dir", "workers"):
            obj.pop(key)
        return _digest(obj)

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    @property
    def worker_count(self) -> int:
        return self.workers if self.workers else default_workers()

    @property
    def search_config(self) -> BisectionConfig:
        return BisectionConfig.from_dict(self.search)


class Manifest:
    """``manifest.json``: configuration hash, artifacts, per-task seeds, timings."""

    def __init__(self, cfg: ExperimentConfig):
        self.path = cfg.out / "manifest.json"
        self.data = {
            "config_hash": cfg.config_hash(),
            "config": cfg.to_dict() | {"output_dir": None, "workers": None},
            "software_version": __version__,
            "artifacts": {"nulls": {}, "tuning": {}, "scans": {}, "tables": {}, "failures": {}},
            "seeds": {},
            "timings": {},
        }
        if self.path.exists():
            old = json.loads(self.path.read_text())
            if old.get("config_hash") == self.data["config_hash"]:
                self.data = old

    def record(self, section: str, key: str, value, seed: str | None = None, seconds: float | None = None):
        self.data["artifacts"][section][key] = value
        if seed is not None:
            self.data["seeds"][f"{section}/{key}"] = seed
        if seconds is not None:
            self.data["timings"][f"{section}/{key}"] = seconds
        self.save()

    def forget_failure(self, key: str):
        if self.data["artifacts"]["failures"].pop(key, None) is not None:
            self.save()

    def save(self):
        _write_atomic(self.path, _dumps(self.data))


class Experiment:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.g = resolve_generator(cfg.generator)
        self.gen_ref = generator_identity(self.g)
        self.root = RngStream(int(cfg.master_seed))
        self.manifest = Manifest(cfg)
        self._resolved = None

    # -- statistic resolution ------------------------------------------------

    def _reference(self, label: str, count: int) -> np.ndarray:
        return sample(self.g, count, self.root.child("reference", label))

    def _tuning_report(self) -> TuningReport | None:
        cfg = self.cfg
        paths = [cfg.out / "tuning" / "report.json"]
        if cfg.tuning.report:
            paths.insert(0, Path(cfg.tuning.report))
        for path in paths:
            if not path.exists():
                continue
            report = TuningReport.from_dict(json.loads(path.read_text()))
            if (report.n, report.m, report.d) == (cfg.n, cfg.m, self.g.dim):
                return report
            log.warning("ignoring tuning report %s: made for (n, m, d) = %s", path, (report.n, report.m, report.d))
        return None

    def resolve(self, spec) -> StatisticSpec:
        stat = StatisticSpec.from_dict(spec)
        if stat.resolved:
            return stat
        if stat.kind == "MMD":
            # one bandwidth for the whole experiment, from a reference pair
            ref = self._reference("mmd-bandwidth", self.cfg.n + self.cfg.m)
            bw = median_heuristic_bandwidth(ref[: self.cfg.n], ref[self.cfg.n :], self.root.child("mmd-bandwidth"))
            return stat.with_bandwidth(bw)
        report = self._tuning_report()
        if report is not None:
            return replace(stat, nplm=report.hyperparams)
        sigma, _ = tune_sigma(
            self._reference("nplm-sigma", self.cfg.n + self.cfg.m), self.cfg.tuning.percentile, self.root.child("nplm-sigma")
        )
        return replace(stat, nplm=NplmHyperparams(sigma, self.cfg.nplm_centers, self.cfg.nplm_lambda))

    @property
    def statistics(self) -> list:
        if self._resolved is None:
            self._resolved = [self.resolve(s) for s in self.cfg.statistics]
        return self._resolved

    # -- tuning -------------------------------------------------------------------

    def tune(self) -> TuningReport:
        cfg, tc = self.cfg, self.cfg.tuning
        if not any(StatisticSpec.from_dict(s).kind == "NPLM" for s in cfg.statistics):
            raise InvalidInputError("tune needs NPLM among the configured statistics")
        key = _digest({"config": cfg.config_hash(), "generator": self.gen_ref})
        out = cfg.out / "tuning"
        if self.manifest.data["artifacts"]["tuning"].get("report") == key and (out / "report.json").exists():
            log.info("tuning report up to date")
            return TuningReport.from_dict(json.loads((out / "report.json").read_text()))
        start = time.perf_counter()
        ref = self._reference("nplm-sigma", cfg.n + cfg.m)
        sigma, hist = tune_sigma(ref, tc.percentile, self.root.child("nplm-sigma"))
        floor = math.ceil(math.sqrt(cfg.n + cfg.m))
        m_grid = tc.m_grid or [floor, 2 * floor, 4 * floor]
        m_grid = [v for v in m_grid if v <= cfg.n + cfg.m]
        report = scan_m_lambda(
            self.g, cfg.n, cfg.m, sigma, m_grid, tc.lambda_grid, tc.repeats, self.root.child("tune"), tc.time_budget, histogram=hist
        )
        _write_atomic(out / "report.json", report.to_json())
        _write_atomic(out / "grid.csv", report.grid_csv())
        _write_atomic(out / "distance_histogram.csv", _histogram_csv(hist))
        _write_atomic(out / "plot_axes.json", _dumps(_TUNING_AXES))
        self._resolved = None
        self.manifest.record("tuning", "report", key, self.root.child("tune").seed_label, time.perf_counter() - start)
        return report

    # -- calibration ---------------------------------------------------------------

    def null_path(self, stat: StatisticSpec) -> Path:
        fp = null_fingerprint(stat, self.gen_ref, self.cfg.n, self.cfg.m)
        return self.cfg.out / "nulls" / f"{stat.kind}-{fp}.f64"

    def null_for(self, stat: StatisticSpec, tag: str | None = None) -> NullDistribution:
        """Load the matching null from disk, building and saving it if needed.

        ``tag`` names the plot files and manifest entries (default: the kind).
        """
        cfg = self.cfg
        name = tag or stat.kind
        fp = null_fingerprint(stat, self.gen_ref, cfg.n, cfg.m)
        path = self.null_path(stat)
        if path.exists():
            null = load_null(path, fp)
            if null.n_tests == cfg.null_tests and null.generation_seed == cfg.master_seed:
                return null
        stream = self.root.child("null", stat.kind)
        start = time.perf_counter()
        null = build_null(stat, self.g, cfg.n, cfg.m, cfg.null_tests, stream, cfg.worker_count)
        elapsed = time.perf_counter() - start
        save_null(null, path)
        plot = null_plot_data(null)
        plot_dir = cfg.out / "plots"
        _write_atomic(plot_dir / f"null-{name}.json", _dumps({"fingerprint": fp, "thresholds": plot["thresholds"], "axes": _NULL_AXES}))
        _write_atomic(plot_dir / f"null-{name}-pdf.csv", _series_csv(("t0_left_edge", "density"), zip(plot["pdf"]["edges"], plot["pdf"]["density"])))
        _write_atomic(plot_dir / f"null-{name}-cdf.csv", _series_csv(("t0", "cdf"), zip(plot["cdf"]["t0"], plot["cdf"]["F"])))
        self.manifest.record(
            "nulls",
            name,
            {"path": str(path.relative_to(cfg.out)), "fingerprint": fp, "n_tests": null.n_tests},
            stream.seed_label,
            elapsed,
        )
        self.manifest.data["timings"][f"per-test/{name}"] = elapsed / null.n_tests
        self.manifest.save()
        return null

    def calibrate(self) -> dict:
        """Build every shared null; returns ``{kind: {alpha: threshold}}``."""
        out = {}
        for stat in self.statistics:
            if stat.kind == "LLR":
                log.info("LLR nulls depend on eps and are built during the scan")
                continue
            null = self.null_for(stat)
            out[stat.kind] = {f"{a:g}": threshold(null, a) for a in self.cfg.alphas}
        _write_atomic(self.cfg.out / "nulls" / "thresholds.json", _dumps(out))
        return out

    # -- scanning --------------------------------------------------------------------

    def cells(self) -> list:
        return [(stat, kind) for stat in self.statistics for kind in self.cfg.deformations]

    def _cell_key(self, stat: StatisticSpec, kind: str) -> str:
        cfg = self.cfg
        return _digest(
            {
                "statistic": stat.to_dict(),
                "deformation": kind,
                "generator": self.gen_ref,
                "n": cfg.n,
                "m": cfg.m,
                "alphas": cfg.alphas,
                "repeats": cfg.repeats,
                "null_tests": cfg.llr_null_tests or cfg.null_tests,
                "search": cfg.search,
                "seed": cfg.master_seed,
            }
        )

    def scan_path(self, stat: StatisticSpec, kind: str, tag: str | None = None) -> Path:
        return self.cfg.out / "scans" / f"{tag or stat.kind}-{kind}.json"

    def scan_cell(self, stat: StatisticSpec, kind: str, tag: str | None = None) -> dict:
        cfg = self.cfg
        key = f"{tag or stat.kind}/{kind}"
        fp = self._cell_key(stat, kind)
        path = self.scan_path(stat, kind, tag)
        if path.exists():
            existing = json.loads(path.read_text())
            if existing.get("fingerprint") == fp:
                return existing
        stream = self.root.child("scan", stat.kind, kind)
        start = time.perf_counter()
        cache: dict = {}
        results = []
        if stat.kind == "LLR":
            if kind not in TRACTABLE_KINDS or not is_parametric(self.g):
                raise UnsupportedDeformationError(f"LLR is unavailable for {kind}")
            for alpha in sorted(cfg.alphas, reverse=True):
                results.append(
                    bisect_epsilon_llr(
                        self.g, kind, alpha, cfg.n, cfg.m, cfg.search_config, cfg.llr_null_tests or cfg.null_tests,
                        stream, cfg.repeats, cache, cfg.worker_count,
                    )
                )
        else:
            null = self.null_for(stat, tag)
            for alpha in sorted(cfg.alphas, reverse=True):
                results.append(bisect_epsilon(stat, self.g, kind, alpha, null, cfg.search_config, stream, cfg.repeats, cache, cfg.worker_count))
        elapsed = time.perf_counter() - start
        doc = {
            "fingerprint": fp,
            "statistic": stat.to_dict(),
            "deformation": kind,
            "generator": self.gen_ref,
            "n": cfg.n,
            "m": cfg.m,
            "seed": stream.seed_label,
            "results": [_deterministic(r) for r in results],
        }
        _write_atomic(path, _dumps(doc))
        _write_atomic(path.with_suffix(".timing.json"), _dumps({"wall_time_seconds": elapsed, "per_alpha": [r.wall_time_seconds for r in results]}))
        self.manifest.forget_failure(key)
        self.manifest.record("scans", key, {"path": str(path.relative_to(cfg.out)), "fingerprint": fp}, stream.seed_label, elapsed)
        return doc

    def scan(self) -> tuple[list, dict]:
        """Scan every cell; failures are recorded and the remaining cells continue."""
        docs, failures = [], {}
        for stat, kind in self.cells():
            key = f"{stat.kind}/{kind}"
            if stat.kind == "LLR" and kind not in TRACTABLE_KINDS:
                continue
            try:
                docs.append(self.scan_cell(stat, kind))
                log.info("scanned %s", key)
            except GentestError as exc:
                log.error("cell %s failed: %s", key, exc)
                failures[key] = f"{type(exc).__name__}: {exc}"
                self.manifest.record("failures", key, failures[key])
        self.report()
        return docs, failures

    def compare_nplm(self, hyperparams: list) -> list:
        """Scan NPLM under several hyperparameter sets on the configured deformations.

        All sets share the random streams of an ordinary NPLM scan, so their
        differences reflect the hyperparameters rather than sampling noise.
        Writes ``tables/nplm-compare.csv`` and returns its rows.
        """
        rows = []
        for i, hp in enumerate(hyperparams):
            stat = StatisticSpec("NPLM", nplm=hp)
            tag = f"NPLM-{i}"
            for kind in self.cfg.deformations:
                doc = self.scan_cell(stat, kind, tag)
                for r in doc["results"]:
                    rows.append([i, hp.sigma, hp.m_centers, hp.lam, kind, r["alpha"], r["eps_alpha"], r["eps_low"], r["eps_up"]])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["set", "sigma", "m_centers", "lambda", "deformation", "alpha", "eps_alpha", "eps_low", "eps_up"])
        w.writerows(rows)
        _write_atomic(self.cfg.out / "tables" / "nplm-compare.csv", buf.getvalue())
        self.manifest.record("tables", "nplm-compare", ["tables/nplm-compare.csv"])
        return rows

    # -- reporting --------------------------------------------------------------------

    def report(self) -> dict:
        """Render the sensitivity tables from the scan files on disk."""
        rows = []
        for stat, kind in self.cells():
            path = self.scan_path(stat, kind)
            base = {"statistic": stat.kind, "deformation": kind}
            if stat.kind == "LLR" and kind not in TRACTABLE_KINDS:
                rows.extend({**base, "alpha": a, "status": "unsupported"} for a in self.cfg.alphas)
                continue
            doc = json.loads(path.read_text()) if path.exists() else None
            if doc is None or doc.get("fingerprint") != self._cell_key(stat, kind):
                status = "failed" if f"{stat.kind}/{kind}" in self.manifest.data["artifacts"]["failures"] else "missing"
                rows.extend({**base, "alpha": a, "status": status} for a in self.cfg.alphas)
                continue
            timing = path.with_suffix(".timing.json")
            wall = json.loads(timing.read_text())["wall_time_seconds"] if timing.exists() else None
            for r in doc["results"]:
                rows.append({**base, "alpha": r["alpha"], "status": "ok", "result": r, "wall_time_seconds": wall})
        _mark_best(rows)
        per_test = {k.split("/", 1)[1]: v for k, v in self.manifest.data["timings"].items() if k.startswith("per-test/")}
        out = self.cfg.out / "tables"
        _write_atomic(out / "sensitivity.csv", _table_csv(rows, per_test))
        _write_atomic(out / "sensitivity.txt", _table_text(rows, self.cfg, per_test))
        self.manifest.record("tables", "sensitivity", ["tables/sensitivity.csv", "tables/sensitivity.txt"])
        return {"rows": rows}


def _deterministic(r: EpsilonScanResult) -> dict:
    d = r.to_dict()
    d.pop("wall_time_seconds")
    return d


_TUNING_AXES = {
    "source": "grid.csv",
    "series": [
        {"x": "lambda", "y": "mean_wall_time_seconds", "group": "m_centers", "x_scale": "log"},
        {"x": "m_centers", "y": "mean_wall_time_seconds", "group": "lambda"},
        {"x": "m_centers", "y": "mean_t0", "y_err": "std_t0", "group": "lambda"},
    ],
}
_NULL_AXES = {"pdf": {"x": "t0_left_edge", "y": "density"}, "cdf": {"x": "t0", "y": "cdf"}}


def _series_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def _histogram_csv(hist) -> str:
    rows = zip(hist.edges[:-1], hist.edges[1:], hist.counts)
    return _series_csv(("left", "right", "count"), rows)


def _mark_best(rows):
    """Flag the smallest finite eps_alpha per (deformation, alpha)."""
    best = {}
    for row in rows:
        if row["status"] != "ok":
            continue
        eps = row["result"]["eps_alpha"]
        key = (row["deformation"], row["alpha"])
        if eps is not None and (key not in best or eps < best[key]):
            best[key] = eps
    for row in rows:
        row["best"] = row["status"] == "ok" and row["result"]["eps_alpha"] is not None and row["result"]["eps_alpha"] == best.get((row["deformation"], row["alpha"]))


def _table_csv(rows, per_test) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["statistic", "deformation", "alpha", "status", "eps_alpha", "eps_low", "eps_up", "insensitive", "cap", "best", "wall_time_seconds", "seconds_per_null_test"])
    for row in rows:
        r = row.get("result") or {}
        w.writerow(
            [
                row["statistic"],
                row["deformation"],
                row["alpha"],
                row["status"],
                r.get("eps_alpha", ""),
                r.get("eps_low", ""),
                r.get("eps_up", ""),
                r.get("insensitive", ""),
                r.get("cap", ""),
                row.get("best", False),
                row.get("wall_time_seconds", ""),
                per_test.get(row["statistic"], ""),
            ]
        )
    return buf.getvalue()


def _cell_text(row) -> str:
    if row["status"] == "unsupported":
        return "-"
    if row["status"] != "ok":
        return row["status"]
    r = row["result"]
    if r["insensitive"]:
        return f"> {r['cap']:g}"
    low = "" if r["eps_low"] is None else f"-{r['eps_alpha'] - r['eps_low']:.3g}"
    up = "> cap" if r["eps_up"] is None else f"+{r['eps_up'] - r['eps_alpha']:.3g}"
    return f"{r['eps_alpha']:.4g} ({low}/{up})" + (" *" if row["best"] else "")


def _table_text(rows, cfg: ExperimentConfig, per_test) -> str:
    stats = list(dict.fromkeys(r["statistic"] for r in rows))
    kinds = list(dict.fromkeys(r["deformation"] for r in rows))
    lines = [f"Critical deformation eps_alpha (-low/+up), n={cfg.n}, m={cfg.m}; * marks the most sensitive statistic", ""]
    for alpha in sorted(cfg.alphas, reverse=True):
        lookup = {(r["statistic"], r["deformation"]): r for r in rows if r["alpha"] == alpha}
        header = [f"alpha={alpha:g}"] + kinds + ["s/null test"]
        body = []
        for s in stats:
            t = per_test.get(s)
            body.append([s] + [_cell_text(lookup[(s, k)]) if (s, k) in lookup else "" for k in kinds] + ["" if t is None else f"{t:.3g}"])
        widths = [max(len(str(row[i])) for row in [header] + body) for i in range(len(header))]
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
        lines.append("  ".join("-" * w for w in widths))
        lines.extend("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in body)
        lines.append("")
    lines.append("Timings are wall-clock seconds on the local machine and are not comparable across hardware.")
    return "\n".join(lines) + "\n"
