"""Dataset ingestion (SVMLight / CSV), preprocessing, splits, and reports."""

from __future__ import annotations

import csv
import dataclasses
import json
import warnings

import numpy as np
import scipy.sparse as sp

from .errors import DataFormatError
from .model import Dataset


def _remap_labels(raw: np.ndarray):
    values = np.unique(raw)
    if values.shape[0] < 2:
        raise DataFormatError(
            f"need at least two distinct labels, found {values.shape[0]}"
        )
    lookup = {v: i + 1 for i, v in enumerate(values)}
    labels = np.array([lookup[v] for v in raw], dtype=np.int64)
    return labels, tuple(values.tolist())


def read_svmlight(path, n_features: int | None = None) -> Dataset:
    """Parse 'label idx:val idx:val ...' lines with 1-based ascending indices.

    Labels are remapped to {1, ..., D} by sorted order of the distinct
    values; the original values land in ``Dataset.label_values``.  The
    feature count is the largest index seen unless ``n_features`` overrides.
    """
    raw_labels = []
    data, indices, indptr = [], [], [0]
    max_index = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                raw_labels.append(float(parts[0]))
            except ValueError:
                raise DataFormatError(
                    f"{path}:{lineno}: bad label {parts[0]!r}"
                ) from None
            prev = 0
            for token in parts[1:]:
                try:
                    idx_str, _, val_str = token.partition(":")
                    idx = int(idx_str)
                    val = float(val_str)
                except ValueError:
                    raise DataFormatError(
                        f"{path}:{lineno}: bad feature token {token!r}"
                    ) from None
                if idx <= prev:
                    raise DataFormatError(
                        f"{path}:{lineno}: feature indices must be ascending "
                        f"and 1-based, got {idx} after {prev}"
                    )
                prev = idx
                max_index = max(max_index, idx)
                indices.append(idx - 1)
                data.append(val)
            indptr.append(len(data))
    if not raw_labels:
        raise DataFormatError(f"{path}: no samples")
    n = n_features if n_features is not None else max_index
    if n < max_index:
        raise DataFormatError(
            f"{path}: feature index {max_index} exceeds n_features={n}"
        )
    if n < 1:
        raise DataFormatError(f"{path}: no features")
    features = sp.csr_matrix(
        (np.array(data), np.array(indices, dtype=np.int64), np.array(indptr)),
        shape=(len(raw_labels), n),
    )
    labels, values = _remap_labels(np.array(raw_labels))
    return Dataset(
        features=features,
        labels=labels,
        num_classes=len(values),
        label_values=values,
    )


def write_svmlight(path, dataset: Dataset) -> None:
    """Inverse of ``read_svmlight`` (writes the remapped labels)."""
    feats = dataset.features
    feats = feats.tocsr() if sp.issparse(feats) else sp.csr_matrix(feats)
    feats.sort_indices()
    with open(path, "w") as fh:
        for m in range(dataset.num_samples):
            row = feats.getrow(m)
            toks = [str(dataset.labels[m])]
            toks += [
                f"{j + 1}:{float(v)!r}" for j, v in zip(row.indices, row.data)
            ]
            fh.write(" ".join(toks) + "\n")


def read_csv(path, label_column: str) -> Dataset:
    """Dense numeric CSV with a header row; one column holds the labels."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataFormatError(
                f"{path}: no column named {label_column!r} in header {header}"
            )
        label_idx = header.index(label_column)
        rows = []
        raw_labels = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(header)} cells, "
                    f"got {len(row)}"
                )
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise DataFormatError(
                    f"{path}:{lineno}: non-numeric cell"
                ) from None
            raw_labels.append(values.pop(label_idx))
            rows.append(values)
    if not rows:
        raise DataFormatError(f"{path}: header only, no samples")
    labels, values = _remap_labels(np.array(raw_labels))
    return Dataset(
        features=np.array(rows, dtype=np.float64),
        labels=labels,
        num_classes=len(values),
        label_values=values,
    )


# ---------------------------------------------------------------------------
# preprocessing

PREPROCESS_STEPS = ("log2", "zscore")


class Preprocessor:
    """log2 and/or z-score transforms; statistics learned by ``fit`` so the
    same scaling can be applied to held-out data."""

    def __init__(self, steps):
        steps = tuple(steps)
        for step in steps:
            if step not in PREPROCESS_STEPS:
                raise ValueError(
                    f"unknown preprocessing step {step!r}; "
                    f"choose from {PREPROCESS_STEPS}"
                )
        self.steps = steps
        self.keep: np.ndarray | None = None
        self.mean: np.ndarray | None = None
        self.std: np.ndarray | None = None

    def _dense(self, dataset: Dataset) -> np.ndarray:
        feats = dataset.features
        if sp.issparse(feats):
            feats = feats.toarray()
        return np.asarray(feats, dtype=np.float64)

    def _log2(self, mat: np.ndarray) -> np.ndarray:
        if np.any(mat <= 0):
            raise ValueError("log2 requires strictly positive features")
        return np.log2(mat)

    def fit(self, dataset: Dataset) -> "Preprocessor":
        mat = self._dense(dataset)
        for step in self.steps:
            if step == "log2":
                mat = self._log2(mat)
            else:
                std = np.std(mat, axis=0)
                keep = std > 0
                if not keep.all():
                    warnings.warn(
                        f"dropping {int((~keep).sum())} constant feature "
                        "column(s) before z-scoring"
                    )
                self.keep = keep
                self.mean = np.mean(mat[:, keep], axis=0)
                self.std = std[keep]
        return self

    def transform(self, dataset: Dataset) -> Dataset:
        mat = self._dense(dataset)
        for step in self.steps:
            if step == "log2":
                mat = self._log2(mat)
            else:
                if self.mean is None:
                    raise RuntimeError("z-score statistics not fitted")
                mat = (mat[:, self.keep] - self.mean) / self.std
        return Dataset(
            features=mat,
            labels=dataset.labels,
            num_classes=dataset.num_classes,
            label_values=dataset.label_values,
        )

    def fit_transform(self, dataset: Dataset) -> Dataset:
        return self.fit(dataset).transform(dataset)


def preprocess(dataset: Dataset, steps) -> Dataset:
    """Apply the named steps with statistics computed on this dataset."""
    return Preprocessor(steps).fit_transform(dataset)


# ---------------------------------------------------------------------------
# splitting and error aggregation


def split_fraction(dataset: Dataset, test_fraction: float, seed: int = 0):
    """Disjoint, exhaustive (train, test) split; deterministic given seed."""
    m = dataset.num_samples
    n_test = int(round(m * test_fraction))
    if n_test < 1 or n_test >= m:
        raise ValueError(
            f"test fraction {test_fraction} leaves an empty split for M={m}"
        )
    perm = np.random.default_rng(seed).permutation(m)
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(
        np.sort(perm[:n_test])
    )


def split_folds(dataset: Dataset, fold: int, n_folds: int, seed: int = 0):
    """(train, test) for one fold of a T-fold partition; test sets across
    folds are pairwise disjoint and cover every sample."""
    m = dataset.num_samples
    if not 2 <= n_folds <= m:
        raise ValueError(f"need 2 <= folds <= M, got {n_folds} for M={m}")
    if not 0 <= fold < n_folds:
        raise ValueError(f"fold {fold} outside [0, {n_folds})")
    perm = np.random.default_rng(seed).permutation(m)
    chunks = np.array_split(perm, n_folds)
    test = chunks[fold]
    train = np.concatenate([c for i, c in enumerate(chunks) if i != fold])
    if test.size == 0 or train.size == 0:
        raise ValueError("empty split")
    return dataset.subset(np.sort(train)), dataset.subset(np.sort(test))


def error_rate_estimate(num_errors: int, num_tests: int):
    """Pooled error rate and its binomial standard deviation."""
    if num_tests < 1:
        raise ValueError("need at least one test sample")
    mu = num_errors / num_tests
    return mu, float(np.sqrt(mu * (1.0 - mu) / num_tests))


# ---------------------------------------------------------------------------
# run reports


@dataclasses.dataclass
class ReportRecord:
    """Machine-readable summary of one training/evaluation run."""

    run_id: str
    mode: str
    moment_method: str
    tuner: str
    iterations: int
    converged: bool
    tuning_seconds: float
    training_seconds: float
    evaluation_seconds: float
    error_rate: float | None
    error_rate_se: float | None
    k99: int | None
    l0: int | None
    hyperparameters: dict
    seed: int
    dataset: dict

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)
