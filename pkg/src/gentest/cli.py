"""Command-line interface: ``gentest gen | tune | calibrate | scan | compare | test | report``.

Experiment commands read one JSON config; flags override its fields.
Exit codes: 0 success, 1 usage or invalid input, 2 numeric or solver failure,
3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .calibration import load_null, null_fingerprint, p_value, threshold
from .errors import (
    BisectionError,
    FingerprintMismatchError,
    GentestError,
    NotPositiveDefiniteError,
    NotPSDError,
    NumericError,
    SolverError,
    TaskFailedError,
)
from .experiment import ExperimentConfig, Experiment
from .generators import resolve_generator, sample
from .io import read_sample, write_sample
from .nplm import NplmHyperparams
from .parallel import ENV_WORKERS
from .rng import RngStream
from .statistics import StatisticSpec, evaluate

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
NUMERIC_ERRORS = (NumericError, SolverError, NotPSDError, NotPositiveDefiniteError, TaskFailedError, BisectionError)

log = logging.getLogger("gentest")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(text: str) -> list:
    return [t.strip() for t in text.split(",") if t.strip()]


def _config_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--out", "--output-dir", dest="output_dir", help="output directory")
    p.add_argument("--generator", help="preset name or generator JSON file")
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--statistics", type=_csv_list, help="comma-separated statistic kinds")
    p.add_argument("--deformations", type=_csv_list, help="comma-separated deformation kinds")
    p.add_argument("--alphas", type=lambda s: [float(v) for v in _csv_list(s)])
    p.add_argument("--null-tests", dest="null_tests", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--seed", dest="master_seed", type=int)
    p.add_argument("--workers", type=int, help=f"worker processes (default: ${ENV_WORKERS} or CPU count)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gentest", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    parent = _config_parent()

    g = sub.add_parser("gen", help="write samples from a generator")
    g.add_argument("--generator", required=True, help="preset name or generator JSON file")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--format", choices=["csv", "f64"])
    g.add_argument("--seed", type=int, default=0)

    sub.add_parser("tune", parents=[parent], help="tune NPLM hyperparameters on reference data")
    sub.add_parser("calibrate", parents=[parent], help="build null distributions")
    sub.add_parser("scan", parents=[parent], help="bisect the critical deformation for every cell")
    sub.add_parser("report", parents=[parent], help="re-render tables from finished scans")

    c = sub.add_parser("compare", parents=[parent], help="scan NPLM under several hyperparameter sets")
    c.add_argument(
        "--nplm", dest="nplm_sets", action="append", required=True, type=_hyperparams, metavar="SIGMA:M:LAMBDA",
        help="one hyperparameter set; repeat the flag for each set",
    )

    t = sub.add_parser("test", parents=[parent], help="run one two-sample test against a stored null")
    t.add_argument("--x", required=True, dest="x_path")
    t.add_argument("--y", required=True, dest="y_path")
    t.add_argument("--statistic", required=True)
    t.add_argument("--null", dest="null_path", help="null file (default: looked up in the output directory)")
    return parser


def _hyperparams(text: str) -> NplmHyperparams:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected SIGMA:M:LAMBDA, got {text!r}")
    try:
        return NplmHyperparams(float(parts[0]), int(parts[1]), float(parts[2]))
    except (ValueError, GentestError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _generator_ref(value: str):
    path = Path(value)
    if path.suffix == ".json" and path.exists():
        return json.loads(path.read_text())
    return value


def load_config(args) -> ExperimentConfig:
    base = json.loads(Path(args.config).read_text()) if args.config else {}
    overrides = {
        k: getattr(args, k)
        for k in ("output_dir", "n", "m", "statistics", "deformations", "alphas", "null_tests", "repeats", "master_seed", "workers")
        if getattr(args, k, None) is not None
    }
    if getattr(args, "generator", None):
        overrides["generator"] = _generator_ref(args.generator)
    return ExperimentConfig.from_dict({**base, **overrides})


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_gen(args) -> int:
    g = resolve_generator(_generator_ref(args.generator))
    x = sample(g, args.count, RngStream(args.seed).child("gen"))
    path = write_sample(args.out, x, args.format)
    _emit({"path": str(path), "n": int(x.shape[0]), "d": int(x.shape[1])})
    return EXIT_OK


def cmd_tune(args) -> int:
    report = Experiment(load_config(args)).tune()
    hp = report.hyperparams
    _emit({"sigma": hp.sigma, "m_centers": hp.m_centers, "lambda": hp.lam})
    return EXIT_OK


def cmd_calibrate(args) -> int:
    _emit({"thresholds": Experiment(load_config(args)).calibrate()})
    return EXIT_OK


def cmd_scan(args) -> int:
    exp = Experiment(load_config(args))
    docs, failures = exp.scan()
    print((exp.cfg.out / "tables" / "sensitivity.txt").read_text(), end="")
    if failures:
        for key, msg in failures.items():
            print(f"failed: {key}: {msg}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_report(args) -> int:
    exp = Experiment(load_config(args))
    exp.report()
    print((exp.cfg.out / "tables" / "sensitivity.txt").read_text(), end="")
    return EXIT_OK


def cmd_compare(args) -> int:
    exp = Experiment(load_config(args))
    rows = exp.compare_nplm(args.nplm_sets)
    print((exp.cfg.out / "tables" / "nplm-compare.csv").read_text(), end="")
    return EXIT_OK if rows else EXIT_USAGE


def cmd_test(args) -> int:
    x, y = read_sample(args.x_path), read_sample(args.y_path)
    if args.null_path:
        null_path = Path(args.null_path)
        exp = None
    else:
        exp = Experiment(load_config(args))
        stat = next((s for s in exp.statistics if s.kind == args.statistic), None)
        if stat is None:
            stat = exp.resolve(args.statistic)
        null_path = exp.null_path(stat)
    if not null_path.exists():
        raise FileNotFoundError(f"no null distribution at {null_path}; run `gentest calibrate` first")
    null = load_null(null_path)
    stat = StatisticSpec.from_dict(null.statistic_spec)
    if stat.kind != args.statistic:
        raise FingerprintMismatchError(f"{null_path} holds a {stat.kind} null, not {args.statistic}")
    expected = null_fingerprint(stat, null.generator_ref, x.shape[0], y.shape[0])
    if expected != null.fingerprint:
        raise FingerprintMismatchError(
            f"{null_path} was calibrated for n={null.n}, m={null.m}; the samples have n={x.shape[0]}, m={y.shape[0]}"
        )
    seed = exp.cfg.master_seed if exp else 0
    t = evaluate(stat, x, y, RngStream(int(seed)).child("test", stat.kind))
    p = p_value(null, t)
    reject = {}
    for a in (0.05, 0.01):
        if a * null.n_tests >= 1:
            reject[f"{a:g}"] = bool(t > threshold(null, a))
    _emit({"statistic": stat.kind, "t": t, "p_value": p, "reject": reject, "n_tests": null.n_tests})
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "tune": cmd_tune, "calibrate": cmd_calibrate, "scan": cmd_scan, "report": cmd_report, "compare": cmd_compare, "test": cmd_test}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NUMERIC_ERRORS as exc:
        print(f"gentest: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"gentest: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (GentestError, ValueError, KeyError, TypeError) as exc:
        print(f"gentest: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
