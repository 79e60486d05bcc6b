"""Accuracy and runtime comparisons of the sum-product moment methods.

The accuracy protocol draws (z_true, y) pairs from the generative model at a
fixed operating point (p_hat, q_p), runs each method on the observed labels,
and scores squared error against both the drawn scores and the high-
resolution quadrature oracle.  The runtime protocol times batch calls and
extrapolates methods that are too slow to run at full sample count.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import kernels
from . import output_denoisers as outdn

METHODS = ("gm", "is", "ni", "ts")


@dataclasses.dataclass
class MethodAccuracy:
    method: str
    mse_vs_true: float
    mse_vs_oracle: float | None


@dataclasses.dataclass
class MethodRuntime:
    method: str
    seconds: float        # extrapolated to `samples` moment computations
    measured_samples: int


def draw_labels(p_hat, q_p, trials, seed):
    """(z_true, y) pairs from z ~ N(p_hat, diag(q_p)), y ~ softmax(z)."""
    d = p_hat.shape[0]
    rng = np.random.default_rng(seed)
    z_true = p_hat + np.sqrt(q_p) * rng.standard_normal((trials, d))
    probs = outdn.softmax(z_true)
    u = rng.random(trials)
    y = 1 + np.sum(np.cumsum(probs, axis=1) < u[:, None], axis=1)
    return z_true, np.minimum(y, d).astype(np.int64)


def _batch(method, labels, p_hat_row, q_p_row, seed, *, approx=None,
           gm_grid=7, is_samples=1500, ni_grid=7, ni_radius=4.0):
    m = labels.shape[0]
    p_hat = np.broadcast_to(p_hat_row, (m, p_hat_row.shape[0])).copy()
    q_p = np.broadcast_to(q_p_row, p_hat.shape).copy()
    if method == "gm":
        z, _, _ = outdn.gm_moments_batch(labels, p_hat, q_p, approx, gm_grid)
    elif method == "is":
        rng = np.random.default_rng(seed)
        z, _, _ = outdn.is_moments_batch(labels, p_hat, q_p, is_samples, rng)
    elif method == "ni":
        z, _, _ = outdn.ni_moments_batch(labels, p_hat, q_p, ni_grid, ni_radius)
    elif method == "ts":
        z, _, _, ok = outdn.ts_moments_batch(labels, p_hat, q_p)
        z[~ok] = np.nan  # breakdown; caller decides how to score it
    else:
        raise ValueError(f"unknown method {method!r}")
    return z


def accuracy_table(num_classes=4, q_p=1.0, trials=10_000, seed=0,
                   methods=METHODS, gm_components=2, is_samples=1500,
                   ni_grid=7, gm_grid=7, with_oracle=True):
    """Per-method MSE against drawn scores and (for D<=5) the oracle mean.

    The trivial estimator z_hat = p_hat is always included for reference.
    Deterministic methods are evaluated once per label value.
    """
    p_hat = np.zeros(num_classes)
    p_hat[0] = 1.0
    q_row = np.full(num_classes, q_p)
    z_true, y = draw_labels(p_hat, q_row, trials, seed)

    oracle = None
    if with_oracle and num_classes <= outdn.BRUTEFORCE_MAX_CLASSES:
        oracle = np.stack(
            [
                outdn.moments_bruteforce(lbl, p_hat, q_row).z_hat
                for lbl in range(1, num_classes + 1)
            ]
        )

    approx = None
    if "gm" in methods or "ts" in methods:
        approx = outdn.fit_softmax_gm_approx(num_classes, gm_components)

    results = []
    for method in methods:
        if method in ("gm", "ni", "ts"):
            per_label = _batch(
                method,
                np.arange(1, num_classes + 1, dtype=np.int64),
                p_hat, q_row, seed, approx=approx, gm_grid=gm_grid,
                ni_grid=ni_grid,
            )
            z_hat = per_label[y - 1]
        else:
            z_hat = _batch(
                method, y, p_hat, q_row, seed + 1, approx=approx,
                is_samples=is_samples,
            )
        err_true = float(np.nanmean(np.sum(np.square(z_true - z_hat), axis=1)))
        err_oracle = None
        if oracle is not None:
            err_oracle = float(
                np.nanmean(np.sum(np.square(oracle[y - 1] - z_hat), axis=1))
            )
        results.append(MethodAccuracy(method, err_true, err_oracle))

    trivial_true = float(np.mean(np.sum(np.square(z_true - p_hat), axis=1)))
    trivial_oracle = None
    if oracle is not None:
        trivial_oracle = float(
            np.mean(np.sum(np.square(oracle[y - 1] - p_hat), axis=1))
        )
    results.append(MethodAccuracy("trivial", trivial_true, trivial_oracle))
    return results


def runtime_table(num_classes=10, q_p=1.0, samples=500, seed=0,
                  methods=METHODS, gm_components=2, is_samples=1500,
                  ni_grid=7, gm_grid=7, max_ni_samples=3, repeats=3):
    """Wall time per `samples` moment computations, best of ``repeats``.

    The full-grid method is timed on ``max_ni_samples`` samples and scaled,
    since its cost per sample is orders of magnitude above the others.
    Jitted kernels are warmed up before timing.
    """
    p_hat = np.zeros(num_classes)
    p_hat[0] = 1.0
    q_row = np.full(num_classes, q_p)
    _, y = draw_labels(p_hat, q_row, samples, seed)

    approx = None
    if "gm" in methods:
        approx = outdn.fit_softmax_gm_approx(num_classes, gm_components)
    if kernels.numba_impl is not None and kernels.active is kernels.numba_impl:
        kernels.numba_impl.warmup()

    results = []
    for method in methods:
        n_run = min(max_ni_samples, samples) if method == "ni" else samples
        labels = y[:n_run]
        args = dict(approx=approx, gm_grid=gm_grid, is_samples=is_samples,
                    ni_grid=ni_grid)
        _batch(method, labels[:1], p_hat, q_row, seed, **args)  # warm path
        best = np.inf
        for _ in range(repeats):
            tic = time.perf_counter()
            _batch(method, labels, p_hat, q_row, seed, **args)
            best = min(best, time.perf_counter() - tic)
        results.append(
            MethodRuntime(method, best * samples / n_run, n_run)
        )
    return results
