"""Datasets: containers, seeded generators, and CSV round-tripping.

A dataset is N labeled points with distinct inputs; regression targets live
in [-1, 1]^{d_y}, classification targets are class indices in [0, d_y).
"""

from __future__ import annotations

import csv
import hashlib
import os
import tempfile
from dataclasses import dataclass

import numpy as np

REGRESSION = "regression"
CLASSIFICATION = "classification"


class DuplicateInputsError(ValueError):
    """Two rows of X coincide exactly (inconsistent-label risk)."""

    def __init__(self, i: int, j: int):
        self.rows = (i, j)
        super().__init__(f"duplicate input rows {i} and {j}")


def _find_duplicate_rows(X: np.ndarray):
    seen = {}
    for i, row in enumerate(X):
        key = row.tobytes()
        if key in seen:
            return seen[key], i
        seen[key] = i
    return None


@dataclass(frozen=True)
class Dataset:
    """X is (N, d_x); y is (N, d_y) targets or (N,) class indices."""

    X: np.ndarray
    y: np.ndarray
    task: str
    d_y: int

    def __post_init__(self):
        object.__setattr__(self, "X", np.asarray(self.X, dtype=float))
        if self.task == CLASSIFICATION:
            object.__setattr__(self, "y", np.asarray(self.y, dtype=int))
        else:
            object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        if self.task not in (REGRESSION, CLASSIFICATION):
            raise ValueError(f"unknown task {self.task!r}")
        if self.X.ndim != 2:
            raise ValueError("X must be 2-D")
        if self.task == REGRESSION:
            if self.y.shape != (self.n, self.d_y):
                raise ValueError(f"y has shape {self.y.shape}, expected ({self.n}, {self.d_y})")
            if self.n and np.abs(self.y).max() > 1.0 + 1e-12:
                raise ValueError("regression targets must lie in [-1, 1]")
        else:
            if self.y.shape != (self.n,):
                raise ValueError("classification labels must be a flat index array")
            if self.n and (self.y.min() < 0 or self.y.max() >= self.d_y):
                raise ValueError(f"labels must lie in [0, {self.d_y})")
        dup = _find_duplicate_rows(self.X)
        if dup is not None:
            raise DuplicateInputsError(*dup)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    def one_hot(self) -> np.ndarray:
        """Targets as an (N, d_y) matrix; expands class indices on demand."""
        if self.task == REGRESSION:
            return self.y
        out = np.zeros((self.n, self.d_y))
        if self.n:
            out[np.arange(self.n), self.y] = 1.0
        return out

    def class_counts(self) -> np.ndarray:
        if self.task != CLASSIFICATION:
            raise ValueError("class_counts needs a classification dataset")
        return np.bincount(self.y, minlength=self.d_y)


def subseed(seed: int, label: str) -> np.random.SeedSequence:
    """Stable sub-stream so adding a stage never perturbs earlier stages."""
    digest = hashlib.sha256(label.encode()).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(key,))


def rng_for(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(subseed(seed, label))


def gen_dataset(kind: str, n: int, d_x: int, d_y: int, seed: int,
                target_scale: float = 0.9) -> Dataset:
    """Seeded dataset generator.

    Kinds: ``regression_uniform`` (Gaussian inputs, uniform targets in
    [-scale, scale]); ``classification_gaussian`` (Gaussian class clusters);
    ``general_position`` (Gaussian inputs resampled until no d_x + 1 points
    share an affine hyperplane); ``hard_line`` (alternating +-1 labels on a
    line, the worst case for piece-counting).
    """
    rng = rng_for(seed, f"gen-{kind}")
    if kind == "regression_uniform":
        X = rng.standard_normal((n, d_x))
        y = rng.uniform(-target_scale, target_scale, size=(n, d_y))
        return Dataset(X, y, REGRESSION, d_y)
    if kind == "classification_gaussian":
        means = 3.0 * rng.standard_normal((d_y, d_x))
        labels = rng.integers(0, d_y, size=n) if n else np.zeros(0, dtype=int)
        X = means[labels] + rng.standard_normal((n, d_x))
        return Dataset(X, labels, CLASSIFICATION, d_y)
    if kind == "general_position":
        from .genpos import is_general_position

        labels = rng.integers(0, d_y, size=n) if n else np.zeros(0, dtype=int)
        for _ in range(64):
            X = rng.standard_normal((n, d_x))
            if is_general_position(X, seed=seed).ok:
                return Dataset(X, labels, CLASSIFICATION, d_y)
        raise RuntimeError("could not sample a general-position dataset in 64 draws")
    if kind == "hard_line":
        from .pwl import hard_dataset

        u = rng.standard_normal(d_x)
        return hard_dataset(n, u)
    raise ValueError(f"unknown dataset kind {kind!r}")


# ---------------------------------------------------------------------------
# CSV round-trip: header x1..xdx,y1..ydy (regression) or x1..xdx,label


def save_csv(dataset: Dataset, path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = [f"x{i + 1}" for i in range(dataset.d_x)]
            if dataset.task == REGRESSION:
                header += [f"y{i + 1}" for i in range(dataset.d_y)]
            else:
                header.append("label")
            writer.writerow(header)
            for i in range(dataset.n):
                row = [repr(float(v)) for v in dataset.X[i]]
                if dataset.task == REGRESSION:
                    row += [repr(float(v)) for v in dataset.y[i]]
                else:
                    row.append(str(int(dataset.y[i])))
                writer.writerow(row)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_csv(path: str) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = list(reader)
    d_x = sum(1 for name in header if name.startswith("x"))
    if d_x == 0 or header[:d_x] != [f"x{i + 1}" for i in range(d_x)]:
        raise ValueError(f"{path}: malformed header {header!r}")
    rest = header[d_x:]
    if rest == ["label"]:
        task = CLASSIFICATION
    elif rest == [f"y{i + 1}" for i in range(len(rest))] and rest:
        task = REGRESSION
    else:
        raise ValueError(f"{path}: malformed header {header!r}")
    X = np.zeros((len(rows), d_x))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {i + 2} has {len(row)} fields, expected {len(header)}")
        X[i] = [float(v) for v in row[:d_x]]
    dup = _find_duplicate_rows(X)
    if dup is not None:
        i, j = dup
        raise ValueError(f"{path}: duplicate x rows at data rows {i + 1} and {j + 1}")
    if task == CLASSIFICATION:
        labels = np.array([int(row[d_x]) for row in rows], dtype=int)
        d_y = int(labels.max()) + 1 if len(labels) else 1
        y = labels
    else:
        d_y = len(rest)
        y = np.array([[float(v) for v in row[d_x:]] for row in rows]).reshape(len(rows), d_y)
    return Dataset(X, y, task, d_y)
