"""Repeated train/test experiments comparing RF, HRF, WRF and canonical HRF.

For one dataset and training size, every repetition draws a split, grows a
single forest on the training part and scores each combination rule on the
same test rows with the same trees:

* ``RF``      equal weights,
* ``HRF``     hedged weights, one variant per (kappa, estimator) in the grid,
* ``WRF``     Winham et al. out-of-bag weights (needs bootstrap),
* ``HRFcan``  hedged weights from the sample covariance with kappa = 1.

Results are RMSE ratios ``sqrt(mean MSE_a) / sqrt(mean MSE_b)`` over the
repetitions, summarised across datasets as boxplot statistics.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import PRNG_NAME, Dataset, generate_friedman, load_registry, load_tsv, subsample_split, validate_shape
from .forest import ForestConfig, fit_forest, residual_matrix, tree_prediction_matrix
from .hedge import HedgeProblem, combine, solve_hedged_weights, winham_weights
from .moments import Estimator, estimate_moments

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_N_TRAIN = (200, 400, 600, 800, 1000, 2000, 3000, 4000, 5000)
DATA_DIR_ENV = "HEDGEFOREST_DATA_DIR"
SYNTHETIC_PREFIX = "friedman"

RAW_COLUMNS = ["dataset", "n_train", "rep", "split_seed", "forest_seed", "method",
               "kappa", "estimator", "mse", "degenerate"]
RATIO_COLUMNS = ["dataset", "n_train", "comparison", "kappa", "estimator", "ratio", "flag"]
SUMMARY_COLUMNS = ["n_train", "comparison", "kappa", "estimator", "n_datasets",
                   "min", "q1", "median", "q3", "max", "mean"]


class ConfigError(ValueError):
    pass


class CellError(RuntimeError):
    pass


def parse_kappa(value) -> float:
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity", "unbounded"):
        return math.inf
    try:
        kappa = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"kappa must be a number >= 1 or 'inf', got {value!r}") from None
    if math.isnan(kappa) or kappa < 1.0:
        raise ConfigError(f"kappa must be >= 1, got {value!r}")
    return kappa


def format_kappa(kappa: float) -> str:
    return "inf" if math.isinf(kappa) else repr(float(kappa))


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple[str, ...] = ("friedman1",)
    n_train: tuple[int, ...] = DEFAULT_N_TRAIN
    B: int = 100
    kappas: tuple[float, ...] = (2.0,)
    estimators: tuple[str, ...] = ("nonlinear_shrinkage",)
    forest: ForestConfig = field(default_factory=ForestConfig)
    master_seed: int = 0
    winham_rule: str = "exp_inverse"
    winham_lambda: float = 5.0
    friedman: dict = field(default_factory=lambda: {"n_total": 6000, "noise_sd": 1.0, "seed": 0})
    data_dir: str | None = None
    registry: str | None = None

    def __post_init__(self):
        if self.B < 1:
            raise ConfigError("B must be >= 1")
        if not self.datasets:
            raise ConfigError("at least one dataset is required")
        if not self.n_train or any(int(n) < 2 for n in self.n_train):
            raise ConfigError("n_train values must be >= 2")
        object.__setattr__(self, "datasets", tuple(self.datasets))
        object.__setattr__(self, "n_train", tuple(int(n) for n in self.n_train))
        object.__setattr__(self, "kappas", tuple(parse_kappa(k) for k in self.kappas))
        try:
            ests = tuple(Estimator.parse(e).value for e in self.estimators)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        object.__setattr__(self, "estimators", ests)
        if isinstance(self.forest, dict):
            try:
                object.__setattr__(self, "forest", ForestConfig(**self.forest))
            except TypeError as exc:
                raise ConfigError(f"bad forest config: {exc}") from None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kappas"] = [format_kappa(k) for k in self.kappas]
        out["datasets"] = list(self.datasets)
        out["n_train"] = list(self.n_train)
        out["estimators"] = list(self.estimators)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw)


@dataclass(frozen=True)
class Method:
    name: str  # RF, HRF, WRF, HRFcan
    kappa: float | None = None
    estimator: str | None = None

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.name, "" if self.kappa is None else format_kappa(self.kappa), self.estimator or "")


def method_list(config: ExperimentConfig) -> list[Method]:
    methods = [Method("RF")]
    methods += [Method("HRF", k, e) for e in config.estimators for k in config.kappas]
    if config.forest.bootstrap:
        methods.append(Method("WRF"))
    methods.append(Method("HRFcan", 1.0, Estimator.SAMPLE.value))
    return methods


@dataclass
class MethodRunResult:
    """Per-repetition test MSEs for every method in one (dataset, n_train) cell."""

    dataset: str
    n_train: int
    methods: list[Method]
    mse: dict[tuple, np.ndarray]
    degenerate: dict[tuple, np.ndarray]
    split_seeds: list[int]
    forest_seeds: list[int]
    fingerprints: list[str]
    wall_time: float = 0.0

    def rmse(self, key) -> float:
        return math.sqrt(float(np.mean(self.mse[key])))


def repetition_seeds(master_seed: int, dataset: str, n_train: int, b: int) -> tuple[int, int]:
    """Split and forest seeds for repetition ``b``, derived from a SHA-256 digest."""
    digest = hashlib.sha256(f"{master_seed}|{dataset}|{n_train}|{b}".encode()).digest()
    return int.from_bytes(digest[:8], "little"), int.from_bytes(digest[8:16], "little")


def _fingerprint(forest, test_indices) -> str:
    h = hashlib.sha256(np.asarray(test_indices, dtype=np.int64).tobytes())
    for t in forest.trees:
        h.update(t.threshold.tobytes())
        h.update(t.value.tobytes())
    return h.hexdigest()[:16]


def hedged_weights(R, kappa: float, estimator: str):
    m = estimate_moments(R, estimator)
    wv = solve_hedged_weights(HedgeProblem(m.mu_hat, m.sigma_hat, kappa))
    if not wv.converged:
        raise RuntimeError(f"hedged-weight solver did not converge (kappa={kappa}, {estimator})")
    return wv


def run_repetition(dataset: Dataset, n_train: int, b: int, config: ExperimentConfig,
                   methods: list[Method], forest_threads: int = 1) -> dict:
    split_seed, forest_seed = repetition_seeds(config.master_seed, dataset.name, n_train, b)
    split = subsample_split(dataset, n_train, split_seed)
    X, y = dataset.features[split.train_indices], dataset.target[split.train_indices]
    Xt, yt = dataset.features[split.test_indices], dataset.target[split.test_indices]

    forest = fit_forest(X, y, replace(config.forest, seed=forest_seed), threads=forest_threads)
    R = residual_matrix(forest, X, y)
    F = tree_prediction_matrix(forest, Xt)
    p = forest.num_trees

    mse, degenerate = {}, {}
    for m in methods:
        flag = False
        if m.name == "RF":
            w = np.full(p, 1.0 / p)
        elif m.name == "WRF":
            w = winham_weights(R, config.winham_rule, config.winham_lambda).w
        else:
            wv = hedged_weights(R, m.kappa, m.estimator)
            w, flag = wv.w, wv.degenerate
            if flag:
                log.info("%s n=%d rep=%d %s: degenerate residuals, equal weights used",
                         dataset.name, n_train, b, m.key)
        mse[m.key] = float(np.mean((yt - combine(w, F)) ** 2))
        degenerate[m.key] = flag
    return {"mse": mse, "degenerate": degenerate, "split_seed": split_seed,
            "forest_seed": forest_seed, "fingerprint": _fingerprint(forest, split.test_indices)}


def run_cell(dataset: Dataset, n_train: int, config: ExperimentConfig, threads: int = 1) -> MethodRunResult:
    """Run ``config.B`` repetitions; any failure aborts the cell with a :class:`CellError`."""
    if n_train >= dataset.n_total:
        raise CellError(f"{dataset.name}: n_train={n_train} must be below n_total={dataset.n_total}")
    methods = method_list(config)
    start = time.perf_counter()

    def one(b):
        try:
            return run_repetition(dataset, n_train, b, config, methods)
        except Exception as exc:
            raise CellError(f"{dataset.name} n_train={n_train} rep={b}: {type(exc).__name__}: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reps = list(pool.map(one, range(config.B)))
    else:
        reps = [one(b) for b in range(config.B)]

    keys = [m.key for m in methods]
    return MethodRunResult(
        dataset=dataset.name,
        n_train=n_train,
        methods=methods,
        mse={k: np.array([r["mse"][k] for r in reps]) for k in keys},
        degenerate={k: np.array([r["degenerate"][k] for r in reps]) for k in keys},
        split_seeds=[r["split_seed"] for r in reps],
        forest_seeds=[r["forest_seed"] for r in reps],
        fingerprints=[r["fingerprint"] for r in reps],
        wall_time=time.perf_counter() - start,
    )


def rmse_ratio(mse_a, mse_b, with_flag: bool = False):
    """``sqrt(mean(mse_a)) / sqrt(mean(mse_b))``.

    When every denominator MSE is zero the ratio is reported as 1 and the
    flag (returned when ``with_flag`` is set) is raised.
    """
    a = np.asarray(mse_a, dtype=np.float64).ravel()
    b = np.asarray(mse_b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size == 0:
        raise ValueError(f"need equal, non-zero lengths, got {a.size} and {b.size}")
    den = float(np.mean(b))
    if den == 0.0:
        ratio, flag = 1.0, True
    else:
        ratio, flag = math.sqrt(float(np.mean(a))) / math.sqrt(den), False
    return (ratio, flag) if with_flag else ratio


def cell_ratios(cell: MethodRunResult) -> list[dict]:
    """HRF/RF, HRF/WRF and HRF/HRFcan for every HRF variant in the cell."""
    by_name = {m.name: m for m in cell.methods if m.name != "HRF"}
    rows = []
    for m in cell.methods:
        if m.name != "HRF":
            continue
        for other in ("RF", "WRF", "HRFcan"):
            if other not in by_name:
                continue
            ratio, flag = rmse_ratio(cell.mse[m.key], cell.mse[by_name[other].key], with_flag=True)
            rows.append({
                "dataset": cell.dataset, "n_train": cell.n_train,
                "comparison": f"HRF/{other}", "kappa": format_kappa(m.kappa),
                "estimator": m.estimator, "ratio": ratio, "flag": int(flag),
            })
    return rows


def summarize(ratio_rows: list[dict]) -> list[dict]:
    """Five-number summary plus mean of ratios across datasets, per grid cell.

    Quartiles use linear interpolation between order statistics (R type 7).
    """
    if not ratio_rows:
        raise ValueError("nothing to summarise")
    groups: dict[tuple, list[float]] = {}
    for row in ratio_rows:
        key = (int(row["n_train"]), row["comparison"], row["kappa"], row["estimator"])
        groups.setdefault(key, []).append(float(row["ratio"]))
    out = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], _kappa_sort(k[2]), k[3])):
        r = np.array(groups[key])
        q = np.quantile(r, [0.0, 0.25, 0.5, 0.75, 1.0])
        out.append({
            "n_train": key[0], "comparison": key[1], "kappa": key[2], "estimator": key[3],
            "n_datasets": len(r), "min": float(q[0]), "q1": float(q[1]), "median": float(q[2]),
            "q3": float(q[3]), "max": float(q[4]), "mean": float(r.mean()),
        })
    return out


def _kappa_sort(k: str) -> float:
    return math.inf if k == "inf" else float(k)


def bias_variance_check(e, atol: float = 1e-10) -> tuple[float, float, float]:
    """Empirical MSE, squared bias and 1/n variance of an error vector.

    Asserts ``mse == bias^2 + var`` up to ``atol`` (relative to the MSE scale).
    """
    e = np.asarray(e, dtype=np.float64).ravel()
    if e.size < 2:
        raise ValueError("need at least 2 errors")
    mse = float(np.mean(e ** 2))
    bias2 = float(np.mean(e)) ** 2
    var = float(np.mean((e - np.mean(e)) ** 2))
    if abs(mse - (bias2 + var)) > atol * max(1.0, mse):
        raise AssertionError(f"MSE {mse!r} != bias^2 + var {bias2 + var!r}")
    return mse, bias2, var


# -- datasets -----------------------------------------------------------------

def resolve_dataset(name: str, config: ExperimentConfig) -> Dataset:
    if name.startswith(SYNTHETIC_PREFIX):
        params = dict(config.friedman)
        ds = generate_friedman(int(params.get("n_total", 6000)), float(params.get("noise_sd", 1.0)),
                               int(params.get("seed", 0)), int(params.get("d", 10)))
        return Dataset(ds.features, ds.target, name, ds.column_names)
    registry = load_registry(config.registry)
    entry = registry.get(name)
    data_dir = Path(os.environ.get(DATA_DIR_ENV) or config.data_dir or "data")
    candidates = []
    if entry is not None and entry.path:
        candidates.append(Path(entry.path))
    candidates += [data_dir / f"{name}.tsv", data_dir / f"{name}.tsv.gz"]
    for path in candidates:
        if path.is_file():
            ds = load_tsv(path, entry.target_column if entry else "target", name=name)
            if entry is not None:
                validate_shape(ds, entry)
            return ds
    raise FileNotFoundError(
        f"dataset {name!r} not found (looked in {[str(c) for c in candidates]}); "
        f"run `hedgeforest fetch` first or set {DATA_DIR_ENV}"
    )


# -- outputs ------------------------------------------------------------------

@dataclass
class RunManifest:
    config: dict
    tool_version: str
    master_seed: int
    prng: str = PRNG_NAME
    schema_version: int = SCHEMA_VERSION
    cells: list[dict] = field(default_factory=list)
    outputs: dict[str, str] = field(default_factory=dict)
    environment: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_rows(fh, columns: list[str], rows) -> None:
    writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row[k]) for k in columns})


def _write_csv(path: Path, columns: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        write_rows(fh, columns, rows)


def raw_rows(cell: MethodRunResult):
    for m in cell.methods:
        for b in range(len(cell.split_seeds)):
            yield {
                "dataset": cell.dataset, "n_train": cell.n_train, "rep": b,
                "split_seed": cell.split_seeds[b], "forest_seed": cell.forest_seeds[b],
                "method": m.name, "kappa": "" if m.kappa is None else format_kappa(m.kappa),
                "estimator": m.estimator or "", "mse": float(cell.mse[m.key][b]),
                "degenerate": int(cell.degenerate[m.key][b]),
            }


def run_experiment(config: ExperimentConfig, out_dir, threads: int = 1) -> RunManifest:
    """Run every (dataset, n_train) cell and write the CSV outputs and manifest.

    Cells run in config order and rows are emitted in (dataset, n_train, method,
    rep) order, so the CSVs are byte-identical across reruns and thread counts.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        config=config.to_dict(), tool_version=__version__, master_seed=config.master_seed,
        environment={"python": platform.python_version(), "numpy": np.__version__},
    )
    cells: list[MethodRunResult] = []
    failures = []
    for name in config.datasets:
        dataset = resolve_dataset(name, config)
        for n in config.n_train:
            log.info("running %s n_train=%d B=%d", name, n, config.B)
            try:
                cell = run_cell(dataset, n, config, threads=threads)
            except CellError as exc:
                log.error("%s", exc)
                manifest.cells.append({"dataset": name, "n_train": n, "status": "failed", "error": str(exc)})
                failures.append(exc)
                continue
            cells.append(cell)
            manifest.cells.append({
                "dataset": name, "n_train": n, "status": "ok",
                "wall_time_s": round(cell.wall_time, 3),
                "degenerate_reps": int(sum(int(v.sum()) for v in cell.degenerate.values())),
            })

    outputs = {"raw_mse": "raw_mse.csv", "ratios": "ratios.csv", "summary": "summary.csv"}
    _write_csv(out_dir / outputs["raw_mse"], RAW_COLUMNS, (r for c in cells for r in raw_rows(c)))
    ratios = [r for c in cells for r in cell_ratios(c)]
    _write_csv(out_dir / outputs["ratios"], RATIO_COLUMNS, ratios)
    _write_csv(out_dir / outputs["summary"], SUMMARY_COLUMNS, summarize(ratios) if ratios else [])
    manifest.outputs = outputs
    (out_dir / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    if failures:
        raise CellError(f"{len(failures)} cell(s) failed; see {out_dir / 'manifest.json'}")
    return manifest


def read_ratio_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    missing = set(RATIO_COLUMNS) - set(rows[0] if rows else RATIO_COLUMNS)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    return rows


def write_summary(rows: list[dict], path) -> None:
    _write_csv(Path(path), SUMMARY_COLUMNS, rows)
