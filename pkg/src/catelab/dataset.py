"""Dataset container, CSV I/O and the fold machinery used by every estimator.

A dataset is the (y, d, x) triple: outcome, binary treatment indicator and
covariate matrix, row-aligned. Folds partition row indices into k nearly
equal groups; a train/estimate split takes one fold as the estimation set
and the rest as the training complement.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .util import fmt_float, rng_stream


class DataValidationError(ValueError):
    """Raised when input data violates a dataset invariant."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Dataset:
    """Row-aligned outcome vector, binary treatment vector and covariates."""

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    feature_names: tuple[str, ...]

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        """Rows of the dataset at `indices` (revalidated)."""
        idx = np.asarray(indices, dtype=int)
        return make_dataset(self.y[idx], self.d[idx], self.x[idx], self.feature_names)


def make_dataset(y, d, x, feature_names=None, _require_both_arms: bool = True) -> Dataset:
    """Build and validate a Dataset from array-likes.

    Args:
        y: outcome vector, length n.
        d: treatment indicator vector in {0, 1}, length n.
        x: covariate matrix, n rows.
        feature_names: optional names for the p covariate columns
            (defaults to x1..xp).
        _require_both_arms: internal escape hatch for simulation debug
            modes that deliberately force a single arm.

    Raises:
        DataValidationError: on non-finite values, non-binary treatment,
            an empty treatment arm, misaligned rows, or n < 2 / p < 1.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    d_raw = np.asarray(d, dtype=float).reshape(-1)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = y.shape[0]
    if x.shape[0] != n or d_raw.shape[0] != n:
        raise DataValidationError(
            f"misaligned rows: y has {n}, d has {d_raw.shape[0]}, x has {x.shape[0]}"
        )
    if n < 2:
        raise DataValidationError(f"need at least 2 observations, got {n}")
    p = x.shape[1]
    if p < 1:
        raise DataValidationError("need at least one covariate column")
    if not np.all(np.isfinite(y)):
        raise DataValidationError("non-finite value in outcome column")
    if not np.all(np.isfinite(x)):
        raise DataValidationError("non-finite value in covariates")
    bad = ~np.isin(d_raw, (0.0, 1.0))
    if bad.any():
        row = int(np.flatnonzero(bad)[0]) + 1
        raise DataValidationError(f"treatment not binary at row {row}")
    d_int = d_raw.astype(int)
    if _require_both_arms and (d_int.sum() == 0 or d_int.sum() == n):
        raise DataValidationError("treatment arm empty")
    if feature_names is None:
        feature_names = tuple(f"x{j + 1}" for j in range(p))
    else:
        feature_names = tuple(str(f) for f in feature_names)
        if len(feature_names) != p:
            raise DataValidationError(
                f"{len(feature_names)} feature names for {p} columns"
            )
    return Dataset(_frozen(y), _frozen(d_int), _frozen(x), feature_names)


def load_csv(path, outcome_col: str, treatment_col: str) -> Dataset:
    """Load a Dataset from a UTF-8, comma-separated file with a header row.

    All columns other than the named outcome and treatment columns become
    covariates, in file order. Cells must parse as decimal or scientific
    notation floats; empty or NA cells are rejected.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise DataValidationError(f"{path}: file not found") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path}: empty file, header row required")
        header = [h.strip() for h in header]
        for col in (outcome_col, treatment_col):
            if col not in header:
                raise DataValidationError(f"{path}: missing column {col!r}")
        y_pos = header.index(outcome_col)
        d_pos = header.index(treatment_col)
        feature_pos = [j for j in range(len(header)) if j not in (y_pos, d_pos)]
        feature_names = [header[j] for j in feature_pos]

        ys, ds, rows = [], [], []
        for r, record in enumerate(reader, start=1):
            if len(record) != len(header):
                raise DataValidationError(
                    f"{path}: row {r} has {len(record)} cells, expected {len(header)}"
                )
            parsed = []
            for j, cell in enumerate(record):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataValidationError(
                        f"{path}: non-numeric value {cell!r} at row {r},"
                        f" column {header[j]!r}"
                    ) from None
            if parsed[d_pos] not in (0.0, 1.0):
                raise DataValidationError(f"treatment not binary at row {r}")
            ys.append(parsed[y_pos])
            ds.append(parsed[d_pos])
            rows.append([parsed[j] for j in feature_pos])

    if not ys:
        raise DataValidationError(f"{path}: no data rows")
    return make_dataset(ys, ds, rows, feature_names)


def save_csv(data: Dataset, path, outcome_col: str = "y", treatment_col: str = "d") -> None:
    """Write a Dataset as CSV (outcome, treatment, then covariates)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([outcome_col, treatment_col, *data.feature_names])
        for i in range(data.n):
            writer.writerow(
                [fmt_float(data.y[i]), str(int(data.d[i])),
                 *[fmt_float(v) for v in data.x[i]]]
            )


def one_hot_encode(x: np.ndarray, feature_names, columns) -> tuple[np.ndarray, tuple[str, ...]]:
    """Expand the named columns into one dummy column per distinct value.

    Used by the CLI for categorical covariates; everything downstream
    expects numeric covariates only.
    """
    feature_names = list(feature_names)
    keep = [j for j, name in enumerate(feature_names) if name not in set(columns)]
    blocks = [x[:, keep]]
    names = [feature_names[j] for j in keep]
    for col in columns:
        if col not in feature_names:
            raise DataValidationError(f"unknown column {col!r} for one-hot encoding")
        j = feature_names.index(col)
        values = np.unique(x[:, j])
        for v in values:
            blocks.append((x[:, j] == v).astype(float).reshape(-1, 1))
            names.append(f"{col}={v:g}")
    return np.hstack(blocks), tuple(names)


@dataclass(frozen=True)
class FoldPlan:
    """Partition of {0..n-1} into k folds with ids 1..k."""

    assignment: np.ndarray  # fold id per row, values in 1..k
    k: int
    seed: int
    n: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "n", int(self.assignment.shape[0]))

    def fold_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)


@dataclass(frozen=True)
class TrainEstimateSplit:
    """Training complement and held-out estimation indices for one fold."""

    train_indices: np.ndarray
    estimate_indices: np.ndarray


def make_folds(n: int, k: int, seed: int) -> FoldPlan:
    """Uniformly random balanced partition of n rows into k folds.

    Rows are shuffled with the seeded stream and dealt round-robin, so
    fold sizes differ by at most one and the same seed always reproduces
    the same assignment.
    """
    if k < 2 or k > n:
        raise ValueError(f"fold count must satisfy 2 <= k <= n, got k={k}, n={n}")
    order = rng_stream(seed, 0).permutation(n)
    assignment = np.empty(n, dtype=int)
    assignment[order] = np.arange(n) % k + 1
    return FoldPlan(_frozen(assignment), k, int(seed))


def split_for_fold(plan: FoldPlan, fold: int) -> TrainEstimateSplit:
    """Held-out indices of `fold` plus their training complement."""
    if fold < 1 or fold > plan.k:
        raise ValueError(f"fold must be in 1..{plan.k}, got {fold}")
    est = plan.fold_indices(fold)
    train = np.flatnonzero(plan.assignment != fold)
    return TrainEstimateSplit(_frozen(train), _frozen(est))
