"""Core data types (datasets, weight matrices) plus prediction and sparsity metrics."""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, ZeroWeightsError


def _as_feature_matrix(features):
    if sp.issparse(features):
        mat = features.tocsr()
        if mat.dtype != np.float64:
            mat = mat.astype(np.float64)
        return mat
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"feature matrix must be 2-D, got shape {arr.shape}")
    return arr


def frobenius_sq(features) -> float:
    """Sum of squared entries of a dense or CSR feature matrix."""
    if sp.issparse(features):
        return float(np.sum(features.data * features.data))
    return float(np.sum(features * features))


@dataclasses.dataclass(frozen=True)
class Dataset:
    """Feature matrix (dense or CSR) with 1-based class labels.

    Rows of ``features`` are samples; ``labels[m]`` lies in
    {1, ..., num_classes}.  ``frobenius_sq`` caches the squared Frobenius
    norm of the feature matrix, which the message-passing engine reads
    every iteration.
    """

    features: np.ndarray | sp.spmatrix
    labels: np.ndarray
    num_classes: int
    label_values: tuple | None = None  # original file labels, position d-1 -> value
    frobenius_sq: float = dataclasses.field(init=False)

    def __post_init__(self):
        feats = _as_feature_matrix(self.features)
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        d = int(self.num_classes)
        if d < 2:
            raise ValueError(f"need at least 2 classes, got {d}")
        m, n = feats.shape
        if m < 1 or n < 1:
            raise DimensionError(f"empty feature matrix with shape {(m, n)}")
        if labels.shape[0] != m:
            raise DimensionError(
                f"{labels.shape[0]} labels for {m} feature rows"
            )
        if labels.min() < 1 or labels.max() > d:
            raise ValueError(
                f"labels must lie in [1, {d}], got range "
                f"[{labels.min()}, {labels.max()}]"
            )
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", d)
        object.__setattr__(self, "frobenius_sq", frobenius_sq(feats))

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        """Row subset as a new dataset; keeps the class count unchanged."""
        rows = np.asarray(rows)
        return Dataset(
            features=self.features[rows],
            labels=self.labels[rows],
            num_classes=self.num_classes,
            label_values=self.label_values,
        )


@dataclasses.dataclass(frozen=True)
class WeightMatrix:
    """N x D classifier weights; column d scores class d."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise DimensionError(f"weights must be 2-D, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights contain non-finite entries")
        object.__setattr__(self, "weights", w)

    @property
    def num_features(self) -> int:
        return self.weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]


@dataclasses.dataclass(frozen=True)
class SparsityReport:
    """Exact support size and 99%-energy count of a weight matrix."""

    l0: int
    k99: int


def predict(weights: WeightMatrix, features) -> int:
    """Predicted class (1-based) for one feature vector: argmax of the scores.

    Ties break to the smallest class index.
    """
    if sp.issparse(features):
        if features.shape[1] != weights.num_features:
            raise DimensionError(
                f"feature length {features.shape[1]} != weight rows "
                f"{weights.num_features}"
            )
        scores = np.asarray(features @ weights.weights).ravel()
    else:
        vec = np.asarray(features, dtype=np.float64).ravel()
        if vec.shape[0] != weights.num_features:
            raise DimensionError(
                f"feature length {vec.shape[0]} != weight rows {weights.num_features}"
            )
        scores = weights.weights.T @ vec
    return int(np.argmax(scores)) + 1


def predict_labels(weights: WeightMatrix, features) -> np.ndarray:
    """Row-wise predictions for a feature matrix (1-based labels)."""
    if features.shape[1] != weights.num_features:
        raise DimensionError(
            f"feature width {features.shape[1]} != weight rows {weights.num_features}"
        )
    scores = features @ weights.weights
    scores = np.asarray(scores)
    return np.argmax(scores, axis=1).astype(np.int64) + 1


def l0(weights: WeightMatrix) -> int:
    """Count of exactly non-zero weight entries (no tolerance)."""
    return int(np.count_nonzero(weights.weights))


def k99(weights: WeightMatrix) -> int:
    """Smallest k such that the k largest-magnitude entries carry 99% of the
    Frobenius norm.

    Undefined (raises) for an all-zero matrix.
    """
    sq = np.sort(np.square(weights.weights).ravel())[::-1]
    total = float(np.sum(sq))
    if total <= 0.0:
        raise ZeroWeightsError("k99 undefined for an all-zero weight matrix")
    fro = np.sqrt(total)
    partial = np.sqrt(np.cumsum(sq))
    return int(np.searchsorted(partial >= 0.99 * fro, True)) + 1


def sparsity_report(weights: WeightMatrix) -> SparsityReport:
    return SparsityReport(l0=l0(weights), k99=k99(weights))
