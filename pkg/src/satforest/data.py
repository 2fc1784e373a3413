"""Dataset loading, synthetic generators, and deterministic splitting.

CSV files must have a header row, comma delimiters and purely numeric
cells.  The synthetic generators reconstruct the commonly published
definitions of the classic regression benchmarks; the exact formulas are
documented in the README so the oracle tests can recompute them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class DataError(Exception):
    """Raised for malformed or unusable input data."""


@dataclass(frozen=True)
class Dataset:
    """Tabular regression data: an n-by-m feature matrix and n targets."""

    features: np.ndarray
    targets: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    name: str = "dataset"

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.targets, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError("feature matrix must be n x m with n, m >= 1")
        if y.shape != (X.shape[0],):
            raise DataError("targets must be a length-n vector")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise DataError("features and targets must be finite")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)
        if not self.feature_names:
            object.__setattr__(
                self, "feature_names", [f"x{j + 1}" for j in range(X.shape[1])]
            )
        if len(self.feature_names) != X.shape[1]:
            raise DataError("feature_names length must equal feature count")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def m(self) -> int:
        return self.features.shape[1]

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(
            self.features[idx],
            self.targets[idx],
            list(self.feature_names),
            name or self.name,
        )


@dataclass(frozen=True)
class FoldPlan:
    """Repeated k-fold assignments, reproducible from the seed."""

    k: int
    repeats: int
    seed: int
    assignments: np.ndarray  # shape (repeats, n), fold index per example

    def fold_indices(self, repeat: int, fold: int):
        """Return (train_idx, val_idx) for one fold of one repeat."""
        row = self.assignments[repeat]
        val = np.flatnonzero(row == fold)
        train = np.flatnonzero(row != fold)
        return train, val


def load_csv(path, target_column: str | None = None) -> Dataset:
    """Load a numeric CSV with a header row into a Dataset.

    The target defaults to the last column.  Any non-numeric cell is an
    error reported with its row and column.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2:
            raise DataError(f"{path}: need at least 2 columns (features + target)")
        if target_column is None:
            target_idx = len(header) - 1
        else:
            try:
                target_idx = header.index(target_column)
            except ValueError:
                raise DataError(
                    f"{path}: target column {target_column!r} not in header"
                ) from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}"
                )
            vals = []
            for col, cell in zip(header, row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric cell at row {lineno}, column {col!r}: {cell!r}"
                    ) from None
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: empty dataset (header only)")
    table = np.asarray(rows, dtype=np.float64)
    mask = np.ones(len(header), dtype=bool)
    mask[target_idx] = False
    names = [h for h, keep in zip(header, mask) if keep]
    import os

    base = os.path.splitext(os.path.basename(str(path)))[0]
    return Dataset(table[:, mask], table[:, target_idx], names, name=base)


def save_csv(ds: Dataset, path) -> None:
    """Write a Dataset back out in the load_csv format (target last)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(ds.feature_names) + ["y"])
        for row, y in zip(ds.features, ds.targets):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(y))])


# Noise scales follow the classic published benchmark setup: unit normal
# noise for the first generator, 125 and 0.1 for the four-input ones
# (roughly a 3:1 signal-to-noise ratio).
_FRIEDMAN_NOISE = {1: 1.0, 2: 125.0, 3: 0.1}


def friedman_response(variant: int, X: np.ndarray) -> np.ndarray:
    """Noise-free response of the given generator at rows of X."""
    if variant == 1:
        return (
            10.0 * np.sin(np.pi * X[:, 0] * X[:, 1])
            + 20.0 * (X[:, 2] - 0.5) ** 2
            + 10.0 * X[:, 3]
            + 5.0 * X[:, 4]
        )
    inner = X[:, 1] * X[:, 2] - 1.0 / (X[:, 1] * X[:, 3])
    if variant == 2:
        return np.sqrt(X[:, 0] ** 2 + inner**2)
    if variant == 3:
        return np.arctan(inner / X[:, 0])
    raise DataError(f"unknown friedman variant {variant!r}")


def gen_friedman(
    variant: int, n: int, noise_seed: int, noise_scale: float | None = None
) -> Dataset:
    """Generate one of the three classic nonlinear benchmark datasets.

    Variant 1 has 10 uniform features (5 informative); variants 2 and 3
    have the standard four-input form.  noise_scale=0 disables noise.
    """
    if n < 1:
        raise DataError("n must be >= 1")
    if variant not in (1, 2, 3):
        raise DataError(f"unknown friedman variant {variant!r}")
    rng = np.random.default_rng(noise_seed)
    if variant == 1:
        X = rng.uniform(0.0, 1.0, size=(n, 10))
    else:
        X = np.column_stack(
            [
                rng.uniform(0.0, 100.0, size=n),
                rng.uniform(40.0 * np.pi, 560.0 * np.pi, size=n),
                rng.uniform(0.0, 1.0, size=n),
                rng.uniform(1.0, 11.0, size=n),
            ]
        )
    y = friedman_response(variant, X)
    scale = _FRIEDMAN_NOISE[variant] if noise_scale is None else float(noise_scale)
    if scale > 0.0:
        y = y + scale * rng.standard_normal(n)
    return Dataset(X, y, name=f"friedman{variant}")


def gen_regression(
    n: int, m: int, seed: int, n_informative: int = 10, noise_scale: float = 0.0
) -> Dataset:
    """Random linear model on standard-normal features.

    Reconstruction of the widely used generator: n_informative features
    get coefficients drawn uniformly from [0, 100), the rest are zero.
    """
    if n < 1 or m < 1:
        raise DataError("n and m must be >= 1")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, m))
    coef = np.zeros(m)
    informative = rng.choice(m, size=min(n_informative, m), replace=False)
    coef[informative] = rng.uniform(0.0, 100.0, size=len(informative))
    y = X @ coef
    if noise_scale > 0.0:
        y = y + noise_scale * rng.standard_normal(n)
    return Dataset(X, y, name="regression")


def gen_sparse_uncorrelated(n: int, seed: int, noise_scale: float = 1.0) -> Dataset:
    """Sparse linear model: 10 normal features, only the first 4 informative.

    Reconstruction of the standard definition
    y = x1 + 2*x2 - 2*x3 - 1.5*x4 + noise.
    """
    if n < 1:
        raise DataError("n must be >= 1")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 10))
    y = X[:, 0] + 2.0 * X[:, 1] - 2.0 * X[:, 2] - 1.5 * X[:, 3]
    if noise_scale > 0.0:
        y = y + noise_scale * rng.standard_normal(n)
    return Dataset(X, y, name="sparse")


def split_train_test(ds: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Uniformly shuffled split with train size floor(4n/5)."""
    if ds.n < 5:
        raise DataError("need at least 5 examples to split 4/5 vs 1/5")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.n)
    n_train = (4 * ds.n) // 5
    return (
        ds.subset(np.sort(perm[:n_train]), name=f"{ds.name}-train"),
        ds.subset(np.sort(perm[n_train:]), name=f"{ds.name}-test"),
    )


def make_folds(n: int, k: int, repeats: int, seed: int) -> FoldPlan:
    """Repeated k-fold plan; fold sizes differ by at most one."""
    if k < 2:
        raise DataError("k must be >= 2")
    if n < k:
        raise DataError(f"cannot make {k} folds from {n} examples")
    if repeats < 1:
        raise DataError("repeats must be >= 1")
    rng = np.random.default_rng(seed)
    assignments = np.empty((repeats, n), dtype=np.int64)
    base = np.repeat(np.arange(k), np.diff((n * np.arange(k + 1)) // k))
    for r in range(repeats):
        assignments[r] = base[rng.permutation(n)]
    return FoldPlan(k=k, repeats=repeats, seed=seed, assignments=assignments)


GENERATORS = {
    "friedman1": lambda n, seed: gen_friedman(1, n, seed),
    "friedman2": lambda n, seed: gen_friedman(2, n, seed),
    "friedman3": lambda n, seed: gen_friedman(3, n, seed),
    "regression": lambda n, seed: gen_regression(n, 100, seed),
    "sparse": lambda n, seed: gen_sparse_uncorrelated(n, seed),
}
