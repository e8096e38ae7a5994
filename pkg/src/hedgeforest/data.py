"""Datasets: PMLB-style TSV ingestion, a Friedman #1 generator and train/test splits.

All randomness comes from ``numpy.random.Generator`` with the PCG64 bit
generator seeded through ``numpy.random.SeedSequence``.  That pairing is
stable across platforms and numpy releases, so a split seed reproduces the
same indices everywhere.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

PRNG_NAME = "numpy.random.PCG64/SeedSequence"

DEFAULT_TARGET = "target"


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    target: np.ndarray
    name: str = "dataset"
    column_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.target, dtype=np.float64).ravel()
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise DataError(f"{X.shape[0]} feature rows but {y.shape[0]} targets")
        if X.shape[0] < 2:
            raise DataError("a dataset needs at least 2 observations")
        if X.shape[1] < 1:
            raise DataError("a dataset needs at least 1 feature")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError("features and target must be finite")
        names = tuple(self.column_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError(f"{len(names)} column names for {X.shape[1]} features")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "target", y)
        object.__setattr__(self, "column_names", names)

    @property
    def n_total(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.target[idx], self.name, self.column_names)


@dataclass(frozen=True)
class Split:
    train_indices: np.ndarray
    test_indices: np.ndarray
    seed: int

    @property
    def n_train(self) -> int:
        return len(self.train_indices)


def _open_text(path: Path):
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
    return open(path, encoding="utf-8", newline="")


def load_tsv(path, target_column: str = DEFAULT_TARGET, name: str | None = None) -> Dataset:
    """Read a tab-separated file with a header row into a :class:`Dataset`.

    Every non-target column becomes a feature, in header order.  Files ending
    in ``.gz`` are decompressed on the fly (PMLB ships ``.tsv.gz``).

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    DataError
        If the target column is missing, a cell is not a finite number
        (the message names the row and column), or fewer than 2 rows remain.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    if name is None:
        name = path.name.split(".")[0]

    with _open_text(path) as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise DataError(f"{path}: target column {target_column!r} not in header {header}")
        t_col = header.index(target_column)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {lineno} has {len(row)} cells, expected {len(header)}")
            values = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: line {lineno}, column {col!r}: cannot parse {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: line {lineno}, column {col!r}: non-finite value {cell!r}")
                values.append(v)
            rows.append(values)

    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 data rows, found {len(rows)}")
    table = np.array(rows, dtype=np.float64)
    feature_cols = [j for j in range(len(header)) if j != t_col]
    return Dataset(
        features=table[:, feature_cols],
        target=table[:, t_col],
        name=name,
        column_names=tuple(header[j] for j in feature_cols),
    )


def write_tsv(dataset: Dataset, path, target_column: str = DEFAULT_TARGET) -> None:
    """Write ``dataset`` in the layout :func:`load_tsv` reads (features first, target last).

    Values are written with ``repr`` so they round-trip exactly.
    """
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(list(dataset.column_names) + [target_column])
        for x, y in zip(dataset.features, dataset.target):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(y))])


def friedman_response(X: np.ndarray) -> np.ndarray:
    """Noise-free Friedman #1 response; only the first five columns matter."""
    X = np.asarray(X, dtype=np.float64)
    return (
        10.0 * np.sin(np.pi * X[:, 0] * X[:, 1])
        + 20.0 * (X[:, 2] - 0.5) ** 2
        + 10.0 * X[:, 3]
        + 5.0 * X[:, 4]
    )


def generate_friedman(n: int, noise_sd: float = 1.0, seed: int = 0, d: int = 10) -> Dataset:
    """Draw ``n`` rows of the Friedman #1 benchmark with ``d`` uniform features."""
    if n < 2:
        raise DataError("n must be at least 2")
    if noise_sd < 0:
        raise DataError("noise_sd must be nonnegative")
    if d < 5:
        raise DataError("Friedman #1 needs at least 5 features")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    X = rng.uniform(0.0, 1.0, size=(n, d))
    eps = rng.standard_normal(n)
    y = friedman_response(X) + noise_sd * eps
    return Dataset(X, y, name="friedman1", column_names=tuple(f"x{j + 1}" for j in range(d)))


def subsample_split(dataset: Dataset, n_train: int, seed: int) -> Split:
    """Draw ``n_train`` rows without replacement for training; the rest is the test set.

    Both index arrays are returned sorted.
    """
    n_total = dataset.n_total
    if not 1 <= n_train < n_total:
        raise DataError(f"n_train must satisfy 1 <= n_train < {n_total}, got {n_train}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    perm = rng.permutation(n_total)
    train = np.sort(perm[:n_train])
    test = np.sort(perm[n_train:])
    train.setflags(write=False)
    test.setflags(write=False)
    return Split(train, test, int(seed))


# -- dataset registry ---------------------------------------------------------

@dataclass(frozen=True)
class RegistryEntry:
    name: str
    n_total: int
    d: int
    url: str | None = None
    path: str | None = None
    target_column: str = DEFAULT_TARGET


def load_registry(path=None) -> dict[str, RegistryEntry]:
    """Parse a registry JSON file; with no argument, the bundled 14-dataset registry.

    Relative ``path`` entries are resolved against the registry file's directory.
    """
    if path is None:
        text = resources.files("hedgeforest").joinpath("registry.json").read_text(encoding="utf-8")
        base = None
    else:
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        base = path.parent
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"registry is not valid JSON: {exc}") from None
    entries = {}
    for item in raw.get("datasets", []):
        try:
            entry = RegistryEntry(
                name=str(item["name"]),
                n_total=int(item["n_total"]),
                d=int(item["d"]),
                url=item.get("url"),
                path=item.get("path"),
                target_column=item.get("target_column", DEFAULT_TARGET),
            )
        except KeyError as exc:
            raise DataError(f"registry entry {item!r} lacks field {exc}") from None
        if entry.path is not None and base is not None and not Path(entry.path).is_absolute():
            entry = RegistryEntry(entry.name, entry.n_total, entry.d, entry.url,
                                  str(base / entry.path), entry.target_column)
        entries[entry.name] = entry
    return entries


def validate_shape(dataset: Dataset, entry: RegistryEntry) -> None:
    if (dataset.n_total, dataset.d) != (entry.n_total, entry.d):
        raise DataError(
            f"{entry.name}: expected {entry.n_total} x {entry.d}, "
            f"found {dataset.n_total} x {dataset.d}"
        )
