"""Prior-side scalar denoisers and their online hyperparameter tuners.

Sum-product uses a spike-and-slab (Bernoulli-Gaussian) prior whose posterior
moments are closed form, with per-class EM refinement of the prior
parameters.  Min-sum uses a Laplacian prior whose MAP denoiser is soft
thresholding, with the threshold scale chosen each iteration by minimizing a
smoothed unbiased risk estimate.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.special import expit

from .special import LOG_SQRT_2PI, norm_cdf, norm_pdf


@dataclasses.dataclass(frozen=True)
class BgPrior:
    """Per-class spike-and-slab parameters: activity beta, slab mean/variance."""

    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        var = np.atleast_1d(np.asarray(self.var, dtype=np.float64))
        if np.any(beta <= 0) or np.any(beta > 1):
            raise ValueError("activity probabilities must lie in (0, 1]")
        if np.any(var <= 0):
            raise ValueError("slab variances must be positive")
        if not np.all(np.isfinite(mean)):
            raise ValueError("slab means must be finite")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def num_classes(self) -> int:
        return self.beta.shape[0]


@dataclasses.dataclass(frozen=True)
class LaplacePrior:
    """Laplacian prior with rate lam: density (lam/2) exp(-lam |x|)."""

    lam: float

    def __post_init__(self):
        if not (self.lam > 0 and np.isfinite(self.lam)):
            raise ValueError("Laplacian rate must be positive and finite")

    @property
    def variance(self) -> float:
        return 2.0 / self.lam**2


def default_bg_prior(num_samples: int, num_features: int, num_classes: int,
                     frobenius_sq: float) -> BgPrior:
    """Scale-matched starting point for EM: sparse activity, zero means,
    slab variance set so the prior score energy matches the label scale."""
    beta = min(0.5, num_samples / (2.0 * num_features))
    col_energy = frobenius_sq / num_samples  # mean squared row norm
    var = (num_classes - 1.0) / (beta * col_energy)
    d = num_classes
    return BgPrior(
        beta=np.full(d, beta), mean=np.zeros(d), var=np.full(d, var)
    )


def bg_denoise(r_hat: np.ndarray, q_r: float, prior: BgPrior):
    """Posterior mean/variance of x under the spike-and-slab prior given
    r_hat = x + N(0, q_r).

    Returns (x_hat, q_x_entries, support_prob), all shaped like ``r_hat``.
    The spike/slab odds are formed in the log domain.
    """
    if not q_r > 0:
        raise ValueError(f"q_r must be positive, got {q_r}")
    r = np.asarray(r_hat, dtype=np.float64)
    beta, mean, var = prior.beta, prior.mean, prior.var

    # log N(r; 0, q_r) and log N(r; mean, var + q_r)
    log_spike = -0.5 * np.square(r) / q_r - 0.5 * np.log(q_r) - LOG_SQRT_2PI
    tv = var + q_r
    log_slab = -0.5 * np.square(r - mean) / tv - 0.5 * np.log(tv) - LOG_SQRT_2PI

    with np.errstate(divide="ignore"):
        log_odds = np.log(beta) - np.log1p(-beta) + log_slab - log_spike
    pi = expit(log_odds)
    pi = np.where(beta >= 1.0, 1.0, pi)

    nu = 1.0 / (1.0 / q_r + 1.0 / var)
    gamma = nu * (r / q_r + mean / var)
    x_hat = pi * gamma
    q_x = pi * (nu + np.square(gamma)) - np.square(x_hat)
    return x_hat, q_x, pi


def bg_marginal_loglik(r_hat: np.ndarray, q_r: float, prior: BgPrior) -> np.ndarray:
    """Per-class log evidence sum_n log[(1-b) N(r;0,q) + b N(r;m,v+q)]."""
    r = np.asarray(r_hat, dtype=np.float64)
    log_spike = -0.5 * np.square(r) / q_r - 0.5 * np.log(q_r) - LOG_SQRT_2PI
    tv = prior.var + q_r
    log_slab = (
        -0.5 * np.square(r - prior.mean) / tv - 0.5 * np.log(tv) - LOG_SQRT_2PI
    )
    hi = np.maximum(log_spike, log_slab)
    mix = hi + np.log(
        (1.0 - prior.beta) * np.exp(log_spike - hi)
        + prior.beta * np.exp(log_slab - hi)
    )
    return np.sum(mix, axis=0)


def em_update_bg(r_hat: np.ndarray, q_r: float, prior: BgPrior,
                 support_prob: np.ndarray) -> BgPrior:
    """One EM refinement of the spike-and-slab parameters, per class column.

    ``support_prob`` must come from ``bg_denoise`` on the same inputs.
    Activity is clamped to [1/N, 1-1/N] and slab variances floored at 1e-8
    so no class can enter an absorbing state.
    """
    r = np.asarray(r_hat, dtype=np.float64)
    n = r.shape[0]
    pi = np.asarray(support_prob, dtype=np.float64)
    nu = 1.0 / (1.0 / q_r + 1.0 / prior.var)
    gamma = nu * (r / q_r + prior.mean / prior.var)

    pi_sum = np.sum(pi, axis=0)
    beta = np.clip(pi_sum / n, 1.0 / n, 1.0 - 1.0 / n)
    safe = np.maximum(pi_sum, 1e-300)
    mean = np.sum(pi * gamma, axis=0) / safe
    var = np.sum(pi * (nu + np.square(gamma - mean)), axis=0) / safe
    var = np.maximum(var, 1e-8)
    return BgPrior(beta=beta, mean=mean, var=var)


def laplace_denoise(r_hat: np.ndarray, q_r: float, lam: float):
    """Soft thresholding at lam * q_r: the MAP denoiser for a Laplacian prior.

    The variance entries equal q_r on the surviving support and 0 elsewhere.
    """
    if not q_r > 0:
        raise ValueError(f"q_r must be positive, got {q_r}")
    if lam < 0:
        raise ValueError(f"threshold rate must be nonnegative, got {lam}")
    r = np.asarray(r_hat, dtype=np.float64)
    x_hat = np.sign(r) * np.maximum(np.abs(r) - lam * q_r, 0.0)
    q_x = np.where(x_hat != 0.0, q_r, 0.0)
    return x_hat, q_x


# ---------------------------------------------------------------------------
# 1-D Gaussian mixture fit + SURE threshold selection


@dataclasses.dataclass(frozen=True)
class Gm1d:
    """1-D Gaussian mixture: weights, means, variances."""

    weight: np.ndarray
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        if abs(float(np.sum(w)) - 1.0) > 1e-10 or np.any(w < 0):
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if np.any(np.asarray(self.var) <= 0):
            raise ValueError("mixture variances must be positive")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "var", np.asarray(self.var, dtype=np.float64))


def gm1d_pdf(gm: Gm1d, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    sd = np.sqrt(gm.var)
    z = (x[:, None] - gm.mean) / sd
    return (norm_pdf(z) / sd) @ gm.weight


def gm1d_cdf(gm: Gm1d, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    z = (x[:, None] - gm.mean) / np.sqrt(gm.var)
    return norm_cdf(z) @ gm.weight


def gm1d_loglik(gm: Gm1d, samples: np.ndarray) -> float:
    x = np.asarray(samples, dtype=np.float64).ravel()
    sd = np.sqrt(gm.var)
    z = (x[:, None] - gm.mean) / sd
    log_comp = -0.5 * np.square(z) - np.log(sd) - LOG_SQRT_2PI
    with np.errstate(divide="ignore"):
        log_comp = log_comp + np.log(gm.weight)
    hi = np.max(log_comp, axis=1, keepdims=True)
    return float(np.sum(hi.ravel() + np.log(np.sum(np.exp(log_comp - hi), axis=1))))


def _partial_second_moment(gm: Gm1d, a: float, b: float) -> float:
    """E[r^2 ; a < r < b] under the mixture."""
    sd = np.sqrt(gm.var)
    alpha = (a - gm.mean) / sd
    beta = (b - gm.mean) / sd
    p = norm_cdf(beta) - norm_cdf(alpha)
    pa, pb = norm_pdf(alpha), norm_pdf(beta)
    second = (
        np.square(gm.mean) * p
        + 2.0 * gm.mean * sd * (pa - pb)
        + gm.var * (p - (beta * pb - alpha * pa))
    )
    return float(second @ gm.weight)


def fit_gm_1d(samples, num_components: int, var_floor: float,
              max_iter: int = 100, tol: float = 1e-8) -> Gm1d:
    """EM fit of a 1-D Gaussian mixture with a variance floor.

    Initialized from sorted-quantile blocks; every M-step re-applies the
    floor.  Requires at least ``num_components`` distinct samples.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    l_count = int(num_components)
    if np.unique(x).shape[0] < l_count:
        raise ValueError(
            f"need at least {l_count} distinct samples, got {np.unique(x).shape[0]}"
        )
    if not var_floor > 0:
        raise ValueError("variance floor must be positive")

    order = np.sort(x)
    blocks = np.array_split(order, l_count)
    mean = np.array([b.mean() for b in blocks])
    var = np.maximum(np.array([b.var() for b in blocks]), var_floor)
    weight = np.full(l_count, 1.0 / l_count)

    prev = -np.inf
    for _ in range(max_iter):
        sd = np.sqrt(var)
        z = (x[:, None] - mean) / sd
        log_resp = -0.5 * np.square(z) - np.log(sd) - LOG_SQRT_2PI
        with np.errstate(divide="ignore"):
            log_resp = log_resp + np.log(weight)
        hi = np.max(log_resp, axis=1, keepdims=True)
        dens = np.exp(log_resp - hi)
        total = np.sum(dens, axis=1, keepdims=True)
        resp = dens / total
        loglik = float(np.sum(hi.ravel() + np.log(total.ravel())))

        nk = np.maximum(np.sum(resp, axis=0), 1e-300)
        weight = nk / x.shape[0]
        mean = (resp.T @ x) / nk
        var = np.maximum(
            (resp.T @ np.square(x)) / nk - np.square(mean), var_floor
        )
        if abs(loglik - prev) < tol:
            break
        prev = loglik
    return Gm1d(weight=weight / np.sum(weight), mean=mean, var=var)


def sure_objective(lam: float, gm: Gm1d, q_r: float) -> float:
    """Closed-form risk surrogate J(lam) for the soft threshold at lam*q_r
    under the fitted amplitude mixture (additive q_r constant dropped)."""
    thr = lam * q_r
    p_in = float(gm1d_cdf(gm, thr) - gm1d_cdf(gm, -thr))
    m2_in = _partial_second_moment(gm, -thr, thr)
    return lam**2 * q_r**2 * (1.0 - p_in) + m2_in - 2.0 * q_r * p_in


def sure_objective_derivative(lam: float, gm: Gm1d, q_r: float) -> float:
    """dJ/dlam: positive once thresholding starts clipping real signal."""
    thr = lam * q_r
    p_in = float(gm1d_cdf(gm, thr) - gm1d_cdf(gm, -thr))
    dens = float(gm1d_pdf(gm, thr) + gm1d_pdf(gm, -thr))
    return 2.0 * lam * q_r**2 * (1.0 - p_in) - 2.0 * q_r**2 * dens


def sure_tune_lambda(r_hat, q_r: float, num_components: int = 3) -> float:
    """Threshold rate minimizing the smoothed risk estimate.

    Fits the amplitude mixture with variance floor q_r (which makes J
    unimodal), then bisects dJ/dlam on [0, max|r|/q_r].  Without a sign
    change the derivative stays negative, so the risk is minimized by
    thresholding everything: lam_max.
    """
    if not q_r > 0:
        raise ValueError(f"q_r must be positive, got {q_r}")
    r = np.asarray(r_hat, dtype=np.float64).ravel()
    lam_max = float(np.max(np.abs(r))) / q_r
    if lam_max == 0.0:
        return 0.0
    gm = fit_gm_1d(r, num_components, var_floor=q_r)
    lo, hi = 0.0, lam_max
    if sure_objective_derivative(hi, gm, q_r) <= 0.0:
        return lam_max
    for _ in range(60):
        if hi - lo < 1e-9 * lam_max:
            break
        mid = 0.5 * (lo + hi)
        if sure_objective_derivative(mid, gm, q_r) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
