"""Synthetic-data machinery: sparse orthonormal class means, noise variance
calibrated to a target Bayes error, balanced sampling, and the analytic
expected-test-error evaluator.

Class-conditional features are a | y ~ N(mu_y, v I) with orthonormal means
supported on K shared rows.  For equal priors the Bayes classifier is
nearest-mean, and because the means are orthonormal its error depends only
on D and v: classifying y against the statistic max_{d != y} g_d - g_y > 1/sqrt(v)
with iid standard normal g.  Calibration and the error evaluator both
exploit that reduction, so no N-dimensional sampling is ever needed.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import DimensionError
from .model import Dataset, WeightMatrix


@dataclasses.dataclass(frozen=True)
class ClassModel:
    """Class means (N x D, orthonormal columns, K-row support) plus noise."""

    means: np.ndarray
    sparsity: int
    noise_var: float | None = None
    bayes_error: float | None = None
    bayes_error_se: float | None = None

    @property
    def num_features(self) -> int:
        return self.means.shape[0]

    @property
    def num_classes(self) -> int:
        return self.means.shape[1]


def gen_means(n: int, k: int, d: int, seed: int = 0,
              permute_support: bool = False) -> ClassModel:
    """K-sparse orthonormal class means: left singular vectors of a K x K
    standard-normal draw, zero-padded to length N.

    The support occupies the first K rows unless ``permute_support`` scatters
    it (same seed).
    """
    if k < d:
        raise ValueError(f"need K >= D for orthonormal means, got K={k}, D={d}")
    if n < k:
        raise ValueError(f"need N >= K, got N={n}, K={k}")
    rng = np.random.default_rng(seed)
    core = rng.standard_normal((k, k))
    u, _, _ = np.linalg.svd(core)
    means = np.zeros((n, d))
    if permute_support:
        rows = rng.permutation(n)[:k]
    else:
        rows = np.arange(k)
    means[rows] = u[:, :d]
    return ClassModel(means=means, sparsity=k)


def _ber_statistics(d: int, mc_samples: int, seed: int) -> np.ndarray:
    """Per-draw statistic U = max_{d != y} g_d - g_y; the nearest-mean
    classifier errs exactly when U > 1/sqrt(v)."""
    rng = np.random.default_rng(seed)
    stats = np.empty(d * mc_samples)
    for y in range(d):
        g = rng.standard_normal((mc_samples, d))
        others = np.delete(g, y, axis=1)
        stats[y * mc_samples:(y + 1) * mc_samples] = (
            np.max(others, axis=1) - g[:, y]
        )
    return stats


def bayes_error_for_variance(v: float, d: int, mc_samples: int = 100_000,
                             seed: int = 0) -> float:
    """Monte-Carlo Bayes error of the nearest-mean rule at noise variance v."""
    stats = _ber_statistics(d, mc_samples, seed)
    return float(np.mean(stats > 1.0 / np.sqrt(v)))


def calibrate_variance(model: ClassModel, target_ber: float = 0.10,
                       mc_samples: int = 100_000, seed: int = 0,
                       tol: float = 0.002, max_iter: int = 40) -> float:
    """Noise variance whose Bayes error matches ``target_ber``.

    Bisection on log v against a common pool of Monte-Carlo draws (the same
    draws score every candidate v, so the estimated error is monotone in v).
    """
    d = model.num_classes
    if not 0.0 < target_ber < (d - 1) / d:
        raise ValueError(
            f"target Bayes error must lie in (0, {(d - 1) / d:.3f}) for "
            f"D={d}, got {target_ber}"
        )
    stats = _ber_statistics(d, mc_samples, seed)

    def ber(log_v):
        return float(np.mean(stats > np.exp(-0.5 * log_v)))

    lo = hi = 0.0
    for _ in range(60):
        if ber(lo) < target_ber:
            break
        lo -= np.log(16.0)
    for _ in range(60):
        if ber(hi) > target_ber:
            break
        hi += np.log(16.0)
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        b = ber(mid)
        if abs(b - target_ber) < tol:
            break
        if b > target_ber:
            hi = mid
        else:
            lo = mid
    return float(np.exp(mid))


def make_class_model(n: int, k: int, d: int, target_ber: float, seed: int,
                     mc_samples: int = 100_000,
                     permute_support: bool = False) -> ClassModel:
    """gen_means + calibrate_variance, with the achieved error recorded."""
    model = gen_means(n, k, d, seed=seed, permute_support=permute_support)
    v = calibrate_variance(model, target_ber, mc_samples=mc_samples, seed=seed)
    ber = bayes_error_for_variance(v, d, mc_samples=mc_samples, seed=seed + 1)
    se = float(np.sqrt(ber * (1.0 - ber) / (d * mc_samples)))
    return dataclasses.replace(
        model, noise_var=v, bayes_error=ber, bayes_error_se=se
    )


def gen_dataset(model: ClassModel, m: int, seed: int = 0) -> Dataset:
    """Balanced draw: M/D samples per class from N(mu_y, v I)."""
    d = model.num_classes
    if m % d != 0:
        raise ValueError(f"M={m} is not divisible by D={d}")
    if model.noise_var is None:
        raise ValueError("model has no calibrated noise variance")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(1, d + 1), m // d)
    features = rng.standard_normal((m, model.num_features))
    features *= np.sqrt(model.noise_var)
    features += model.means[:, labels - 1].T
    return Dataset(features=features, labels=labels, num_classes=d)


def expected_error(weights: WeightMatrix, model: ClassModel,
                   mc_samples: int = 10**6, seed: int = 0):
    """Analytic expected test error of a linear classifier under the model.

    Correct classification of class y is the joint event
    (x_y - x_d)' a < (x_y - x_d)' mu_y for all d != y with a ~ N(0, v I);
    the orthant probability is estimated by Monte Carlo in the (D-1)-dim
    projected space, with one common pool of draws across classes.
    Returns (error_estimate, standard_error).
    """
    if weights.num_features != model.num_features:
        raise DimensionError(
            f"weights have {weights.num_features} rows, model has "
            f"{model.num_features} features"
        )
    if weights.num_classes != model.num_classes:
        raise DimensionError(
            f"weights have {weights.num_classes} columns, model has "
            f"{model.num_classes} classes"
        )
    if model.noise_var is None:
        raise ValueError("model has no calibrated noise variance")
    x = weights.weights
    d = model.num_classes
    v = model.noise_var
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((mc_samples, d - 1))

    correct = np.zeros(mc_samples)
    for y in range(d):
        w = x[:, y][:, None] - np.delete(x, y, axis=1)  # (N, D-1)
        bound = w.T @ model.means[:, y]  # (D-1,)
        cov = v * (w.T @ w)
        # eigen square root tolerates rank-deficient (e.g. all-equal) weights
        evals, evecs = np.linalg.eigh(cov)
        root = evecs * np.sqrt(np.clip(evals, 0.0, None))
        t = z @ root.T  # (mc, D-1) ~ N(0, cov)
        correct += np.all(t < bound, axis=1)
    err_draws = 1.0 - correct / d
    estimate = float(np.mean(err_draws))
    se = float(np.std(err_draws) / np.sqrt(mc_samples))
    return estimate, se
