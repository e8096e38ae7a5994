"""Command-line entry point: ``hedgeforest {fetch,weights,bench,summarize}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import shutil
import sys
import urllib.request
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    DATA_DIR_ENV,
    SUMMARY_COLUMNS,
    CellError,
    ConfigError,
    ExperimentConfig,
    parse_kappa,
    read_ratio_csv,
    run_experiment,
    summarize,
    write_rows,
    write_summary,
)
from .data import DataError, load_registry, load_tsv, validate_shape
from .forest import ResidualMatrix
from .hedge import HedgeProblem, NotPSDError, solve_hedged_weights
from .moments import Estimator, estimate_moments

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

PMLB_URL = "https://github.com/EpistasisLab/pmlb/raw/master/datasets/{name}/{name}.tsv.gz"

log = logging.getLogger("hedgeforest")


class UsageError(Exception):
    pass


def _kappa_arg(value: str) -> float:
    try:
        return parse_kappa(value)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _estimator_arg(value: str) -> str:
    try:
        return Estimator.parse(value).value
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- fetch --------------------------------------------------------------------

def cmd_fetch(args) -> int:
    try:
        registry = load_registry(args.registry)
    except (OSError, DataError) as exc:
        raise UsageError(f"cannot load registry: {exc}") from None
    names = args.only or list(registry)
    unknown = [n for n in names if n not in registry]
    if unknown:
        raise UsageError(f"not in registry: {unknown}")
    dest = Path(args.dest or os.environ.get(DATA_DIR_ENV) or "data")
    dest.mkdir(parents=True, exist_ok=True)

    checksums, failed = {}, []
    for name in names:
        entry = registry[name]
        try:
            if entry.path and Path(entry.path).is_file():
                path = Path(entry.path)
            else:
                path = dest / f"{name}.tsv.gz"
                if not path.is_file():
                    url = entry.url or PMLB_URL.format(name=name)
                    print(f"{name}: downloading {url}", file=sys.stderr)
                    tmp = path.with_suffix(".part")
                    with urllib.request.urlopen(url, timeout=args.timeout) as resp, open(tmp, "wb") as fh:
                        shutil.copyfileobj(resp, fh)
                    tmp.replace(path)
            ds = load_tsv(path, entry.target_column, name=name)
            validate_shape(ds, entry)
        except (OSError, DataError) as exc:
            print(f"{name}: FAILED {exc}")
            failed.append(name)
            continue
        checksums[name] = {"path": str(path), "sha256": _sha256(path), "n_total": ds.n_total, "d": ds.d}
        print(f"{name}: ok {ds.n_total} x {ds.d}")

    (dest / "checksums.json").write_text(json.dumps(checksums, indent=2, sort_keys=True), encoding="utf-8")
    return EXIT_RUNTIME if failed else EXIT_OK


# -- weights ------------------------------------------------------------------

def read_matrix_csv(path) -> np.ndarray:
    """Numeric CSV, one row per observation; a non-numeric first row is a header."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows:
        try:
            [float(c) for c in rows[0]]
        except ValueError:
            rows = rows[1:]
    try:
        M = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if M.ndim != 2 or M.shape[0] < 2:
        raise DataError(f"{path}: need a matrix with at least 2 rows")
    return M


def cmd_weights(args) -> int:
    try:
        R = ResidualMatrix(read_matrix_csv(args.residuals))
    except OSError as exc:
        raise UsageError(str(exc)) from None
    moments = estimate_moments(R, args.estimator)
    wv = solve_hedged_weights(HedgeProblem(moments.mu_hat, moments.sigma_hat, args.kappa))
    if args.out:
        wv.write_csv(args.out)
    else:
        print("tree,weight")
        for j, wj in enumerate(wv.w):
            print(f"{j},{float(wj)!r}")
    status = {"objective": wv.objective_value, "gross_exposure": wv.gross_exposure,
              "converged": wv.converged, "degenerate": wv.degenerate}
    print(json.dumps(status), file=sys.stderr)
    return EXIT_OK if wv.converged else EXIT_RUNTIME


# -- bench --------------------------------------------------------------------

def cmd_bench(args) -> int:
    config = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.kappa:
        overrides["kappas"] = tuple(args.kappa)
    if args.estimator:
        overrides["estimators"] = tuple(args.estimator)
    if args.B is not None:
        overrides["B"] = args.B
    if args.n_train:
        overrides["n_train"] = tuple(args.n_train)
    if overrides:
        config = replace(config, **overrides)
    out_dir = Path(args.out_dir or "results")
    try:
        manifest = run_experiment(config, out_dir, threads=args.threads)
    except CellError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (FileNotFoundError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for cell in manifest.cells:
        print(f"{cell['dataset']} n_train={cell['n_train']}: {cell['status']}")
    print(f"outputs written to {out_dir}")
    return EXIT_OK


# -- summarize ----------------------------------------------------------------

def cmd_summarize(args) -> int:
    rows = []
    for path in args.ratios:
        try:
            rows += read_ratio_csv(path)
        except OSError as exc:
            raise UsageError(str(exc)) from None
    summary = summarize(rows)
    if args.out:
        write_summary(summary, args.out)
    else:
        write_rows(sys.stdout, SUMMARY_COLUMNS, summary)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hedgeforest", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download and validate the benchmark datasets")
    p.add_argument("--registry", help="registry JSON (default: bundled 14-dataset registry)")
    p.add_argument("--dest", "--out-dir", dest="dest", help=f"data directory (default: ${DATA_DIR_ENV} or ./data)")
    p.add_argument("--only", nargs="+", metavar="NAME", help="restrict to these datasets")
    p.add_argument("--timeout", type=float, default=60.0)
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("weights", help="hedged weights for a residual-matrix CSV")
    p.add_argument("residuals", help="CSV with one row per observation and one column per method")
    p.add_argument("--kappa", type=_kappa_arg, default=2.0, help="gross-exposure bound >= 1, or 'inf'")
    p.add_argument("--estimator", type=_estimator_arg, default="nonlinear_shrinkage",
                   help="sample | linear_shrinkage | nonlinear_shrinkage")
    p.add_argument("--out", help="write (tree, weight) CSV here instead of stdout")
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("bench", help="run the repeated train/test benchmark")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads (never changes results)")
    p.add_argument("--kappa", type=_kappa_arg, nargs="+", help="kappa grid")
    p.add_argument("--estimator", type=_estimator_arg, nargs="+", help="covariance estimator grid")
    p.add_argument("--B", type=int, help="repetitions per cell")
    p.add_argument("--n-train", type=int, nargs="+", help="training-set sizes")
    p.add_argument("--out-dir", help="output directory (default: ./results)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("summarize", help="boxplot statistics from ratio CSVs")
    p.add_argument("ratios", nargs="+", help="ratios.csv files written by `bench`")
    p.add_argument("--out", help="summary CSV path (default: stdout)")
    p.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, NotPSDError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
