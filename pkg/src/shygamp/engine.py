"""Scalar-variance message-passing engine.

One iteration runs: input denoise (prior side) -> scalar forward variance ->
pseudo-score with Onsager correction -> output denoise (likelihood side) ->
scalar backward variances -> dual update -> pseudo-observation of the
weights.  Damping blends the weight and dual estimates; optional tuners
re-fit the prior hyperparameters online.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import input_denoisers as indn
from . import output_denoisers as outdn
from .errors import DegenerateVarianceError, DivergenceError
from .model import Dataset, WeightMatrix

MODES = ("spa", "msa")
MOMENT_METHODS = ("gm", "is", "ni", "ts")
TUNERS = ("em", "sure", "fixed")

Q_Z_FLOOR = 1e-12  # relative to q_p
Q_S_FLOOR = 1e-12  # relative to 1/q_p
THETA_MIN = 0.05
THETA_GROW = 1.1
THETA_SHRINK = 0.5


@dataclasses.dataclass
class GampConfig:
    """Run settings; ``tuner=None`` picks the default pairing for the mode."""

    mode: str = "spa"
    max_iters: int = 200
    tol: float = 1e-5
    damping: float = 1.0
    adaptive_damping: bool = True
    seed: int = 0
    moment_method: str = "gm"
    tuner: str | None = None
    lam: float | None = None  # Laplacian rate for msa (initial value under sure)
    is_samples: int = 1500
    ni_grid: int = 7
    ni_radius: float = 4.0
    gm_grid: int = 7
    gm_components: int = 2
    sure_components: int = 3
    record_state: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.tuner is None:
            self.tuner = "em" if self.mode == "spa" else "sure"
        if self.tuner not in TUNERS:
            raise ValueError(f"tuner must be one of {TUNERS}, got {self.tuner!r}")
        if self.moment_method not in MOMENT_METHODS:
            raise ValueError(
                f"moment_method must be one of {MOMENT_METHODS}, "
                f"got {self.moment_method!r}"
            )
        if self.mode == "msa" and self.tuner == "em":
            raise ValueError("EM tuning pairs with the sum-product mode only")
        if self.mode == "spa" and self.tuner == "sure":
            raise ValueError("SURE tuning pairs with the min-sum mode only")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.mode == "msa" and self.tuner == "fixed":
            if self.lam is None or not self.lam > 0:
                raise ValueError("fixed-lambda min-sum runs need lam > 0")


@dataclasses.dataclass
class GampState:
    """All per-iteration message quantities."""

    x_hat: np.ndarray
    r_hat: np.ndarray | None
    p_hat: np.ndarray
    z_hat: np.ndarray
    s_hat: np.ndarray
    q_x: float
    q_p: float
    q_r: float
    q_s: float
    q_z: np.ndarray
    iteration: int

    def copy(self) -> "GampState":
        return GampState(
            x_hat=self.x_hat.copy(),
            r_hat=None if self.r_hat is None else self.r_hat.copy(),
            p_hat=self.p_hat.copy(),
            z_hat=self.z_hat.copy(),
            s_hat=self.s_hat.copy(),
            q_x=self.q_x,
            q_p=self.q_p,
            q_r=self.q_r,
            q_s=self.q_s,
            q_z=self.q_z.copy(),
            iteration=self.iteration,
        )


@dataclasses.dataclass
class IterationRecord:
    iteration: int
    q_x: float
    q_p: float
    q_s: float
    q_r: float
    rel_change: float
    theta: float
    hyper: dict
    wall_time: float


@dataclasses.dataclass
class TrainResult:
    weights: WeightMatrix
    trace: list
    iterations_run: int
    converged: bool
    tuning_time: float = 0.0
    state: GampState | None = None
    state_history: list | None = None


def forward_variance(q_x: float, dataset: Dataset) -> float:
    """Scalar pseudo-score variance: ||A||_F^2 * q_x / M."""
    if q_x < 0:
        raise ValueError(f"q_x must be nonnegative, got {q_x}")
    return dataset.frobenius_sq * q_x / dataset.num_samples


def backward_variances(q_p: float, q_z: np.ndarray, dataset: Dataset):
    """Scalar dual and pseudo-observation variances from per-entry q_z.

    q_z is clamped into [1e-12 q_p, q_p] first; an exactly non-positive
    average dual precision is a degenerate (perfectly informative)
    likelihood and raises.  Returns (q_s, q_r).
    """
    if not q_p > 0:
        raise DegenerateVarianceError(f"q_p must be positive, got {q_p}")
    q_z = np.clip(q_z, Q_Z_FLOOR * q_p, q_p)
    q_s = float(np.mean(1.0 / q_p - q_z / q_p**2))
    if q_s <= 0.0:
        raise DegenerateVarianceError(
            "dual variance collapsed to zero (q_z == q_p everywhere)"
        )
    q_s = max(q_s, Q_S_FLOOR / q_p)
    q_r = dataset.num_features / (q_s * dataset.frobenius_sq)
    return q_s, q_r


def damp(new_state: GampState, prev_state: GampState, theta: float) -> GampState:
    """Blend x_hat and s_hat as theta*new + (1-theta)*old; variances and the
    remaining arrays come from the new state.  theta=1 is a no-op."""
    if not (0.0 < theta <= 1.0):
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    if theta == 1.0:
        return new_state
    blended = new_state.copy()
    blended.x_hat = theta * new_state.x_hat + (1.0 - theta) * prev_state.x_hat
    blended.s_hat = theta * new_state.s_hat + (1.0 - theta) * prev_state.s_hat
    return blended


def next_theta(theta: float, rel_change: float, prev_rel_change: float,
               adaptive: bool) -> float:
    """Halve the blend on oscillation (growing step), grow it gently otherwise."""
    if not adaptive:
        return theta
    if rel_change > prev_rel_change:
        return max(theta * THETA_SHRINK, THETA_MIN)
    return min(theta * THETA_GROW, 1.0)


# ---------------------------------------------------------------------------
# denoiser adapters


class BgInputDenoiser:
    """Spike-and-slab posterior denoiser with optional per-iteration EM."""

    def __init__(self, prior: indn.BgPrior, em: bool = True):
        self.prior = prior
        self.em = em

    def initial(self, n: int, d: int):
        x0 = np.broadcast_to(self.prior.beta * self.prior.mean, (n, d)).copy()
        q_x0 = float(np.sum(self.prior.beta * self.prior.var) / d)
        return x0, q_x0

    def tune_before(self, r_hat, q_r):
        pass

    def denoise(self, r_hat, q_r):
        x_hat, q_x, pi = indn.bg_denoise(r_hat, q_r, self.prior)
        return x_hat, q_x, pi

    def tune_after(self, r_hat, q_r, aux):
        if self.em:
            self.prior = indn.em_update_bg(r_hat, q_r, self.prior, aux)

    def hyper(self) -> dict:
        return {
            "beta": self.prior.beta.tolist(),
            "mean": self.prior.mean.tolist(),
            "var": self.prior.var.tolist(),
        }


class LaplaceInputDenoiser:
    """Soft-threshold denoiser with optional per-iteration SURE re-tuning."""

    def __init__(self, lam: float, sure: bool = True, sure_components: int = 3):
        if not lam > 0:
            raise ValueError("initial lambda must be positive")
        self.lam = float(lam)
        self.sure = sure
        self.sure_components = sure_components

    def initial(self, n: int, d: int):
        return np.zeros((n, d)), 2.0 / self.lam**2

    def tune_before(self, r_hat, q_r):
        if self.sure:
            self.lam = indn.sure_tune_lambda(
                r_hat, q_r, num_components=self.sure_components
            )

    def denoise(self, r_hat, q_r):
        x_hat, q_x = indn.laplace_denoise(r_hat, q_r, self.lam)
        return x_hat, q_x, None

    def tune_after(self, r_hat, q_r, aux):
        pass

    def hyper(self) -> dict:
        return {"lambda": self.lam}


class SpaOutputDenoiser:
    """Sum-product score moments by the configured method.

    The expansion method falls back to the mixture method on the samples
    where its normalizer breaks down.
    """

    def __init__(self, method: str, num_classes: int, config: GampConfig,
                 approx: outdn.GmLikApprox | None = None):
        self.method = method
        self.num_classes = num_classes
        self.config = config
        self._approx = approx

    @property
    def approx(self) -> outdn.GmLikApprox:
        if self._approx is None:
            self._approx = outdn.fit_softmax_gm_approx(
                self.num_classes, self.config.gm_components
            )
        return self._approx

    def denoise(self, labels, p_hat, q_p_scalar, iteration):
        cfg = self.config
        q_p = np.full_like(p_hat, q_p_scalar)
        if self.method == "gm":
            z, qz, _ = outdn.gm_moments_batch(
                labels, p_hat, q_p, self.approx, cfg.gm_grid, 4.0
            )
        elif self.method == "is":
            rng = np.random.default_rng(
                np.random.SeedSequence((cfg.seed, iteration))
            )
            z, qz, _ = outdn.is_moments_batch(
                labels, p_hat, q_p, cfg.is_samples, rng
            )
        elif self.method == "ni":
            z, qz, _ = outdn.ni_moments_batch(
                labels, p_hat, q_p, cfg.ni_grid, cfg.ni_radius
            )
        elif self.method == "ts":
            z, qz, _, ok = outdn.ts_moments_batch(labels, p_hat, q_p)
            if not ok.all():
                bad = np.flatnonzero(~ok)
                zb, qb, _ = outdn.gm_moments_batch(
                    labels[bad], p_hat[bad], q_p[bad], self.approx,
                    cfg.gm_grid, 4.0,
                )
                z[bad] = zb
                qz[bad] = qb
        else:
            raise ValueError(f"unknown moment method {self.method!r}")
        return z, qz


class MsaOutputDenoiser:
    """Min-sum MAP scores via componentwise Newton."""

    def __init__(self, max_iter: int = 50, grad_tol: float = 1e-8):
        self.max_iter = max_iter
        self.grad_tol = grad_tol

    def denoise(self, labels, p_hat, q_p_scalar, iteration):
        q_p = np.full_like(p_hat, q_p_scalar)
        z, qz, _, _ = outdn.newton_moments_batch(
            labels, p_hat, q_p, self.max_iter, self.grad_tol
        )
        return z, qz


def make_denoisers(dataset: Dataset, config: GampConfig,
                   prior: indn.BgPrior | None = None):
    """Default (input, output) denoiser pair for the configured mode."""
    if config.mode == "spa":
        if prior is None:
            prior = indn.default_bg_prior(
                dataset.num_samples,
                dataset.num_features,
                dataset.num_classes,
                dataset.frobenius_sq,
            )
        input_dn = BgInputDenoiser(prior, em=config.tuner == "em")
        output_dn = SpaOutputDenoiser(
            config.moment_method, dataset.num_classes, config
        )
    else:
        lam = config.lam if config.lam is not None else 1.0
        input_dn = LaplaceInputDenoiser(
            lam, sure=config.tuner == "sure",
            sure_components=config.sure_components,
        )
        output_dn = MsaOutputDenoiser()
    return input_dn, output_dn


def _check_finite(state: GampState, iteration: int):
    arrays = [state.x_hat, state.p_hat, state.z_hat, state.s_hat]
    if state.r_hat is not None:
        arrays.append(state.r_hat)
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise DivergenceError(iteration)
    if not (np.isfinite(state.q_x) and np.isfinite(state.q_p)
            and np.isfinite(state.q_s) and np.isfinite(state.q_r)):
        raise DivergenceError(iteration)


def run(dataset: Dataset, config: GampConfig, input_denoiser=None,
        output_denoiser=None) -> TrainResult:
    """Run the message-passing loop until the relative weight change drops
    below ``config.tol`` or ``config.max_iters`` is reached."""
    if input_denoiser is None or output_denoiser is None:
        made_in, made_out = make_denoisers(dataset, config)
        input_denoiser = input_denoiser or made_in
        output_denoiser = output_denoiser or made_out

    a = dataset.features
    labels = dataset.labels
    m, n = a.shape
    d = dataset.num_classes

    x_hat, q_x = input_denoiser.initial(n, d)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    s_hat = np.zeros((m, d))
    r_hat = None
    q_r = np.nan
    theta = config.damping
    prev_rel = np.inf
    tuning_time = 0.0
    trace: list[IterationRecord] = []
    history: list[GampState] | None = [] if config.record_state else None
    converged = False
    iteration = 0

    for iteration in range(1, config.max_iters + 1):
        tic = time.perf_counter()
        x_old = x_hat
        s_old = s_hat

        if iteration > 1:
            t0 = time.perf_counter()
            input_denoiser.tune_before(r_hat, q_r)
            tuning_time += time.perf_counter() - t0
            x_new, q_x_entries, aux = input_denoiser.denoise(r_hat, q_r)
            t0 = time.perf_counter()
            input_denoiser.tune_after(r_hat, q_r, aux)
            tuning_time += time.perf_counter() - t0
            q_x = float(np.mean(q_x_entries))
            x_hat = theta * x_new + (1.0 - theta) * x_old

        q_p = forward_variance(q_x, dataset)
        if not q_p > 0:
            raise DegenerateVarianceError(
                f"q_p collapsed to {q_p} at iteration {iteration}"
            )
        p_hat = np.asarray(a @ x_hat) - q_p * s_old
        z_hat, q_z = output_denoiser.denoise(labels, p_hat, q_p, iteration)
        q_z = np.clip(q_z, Q_Z_FLOOR * q_p, q_p)
        q_s, q_r = backward_variances(q_p, q_z, dataset)
        s_new = (z_hat - p_hat) / q_p
        s_hat = theta * s_new + (1.0 - theta) * s_old
        r_hat = x_hat + q_r * np.asarray(a.T @ s_hat)

        state = GampState(
            x_hat=x_hat, r_hat=r_hat, p_hat=p_hat, z_hat=z_hat, s_hat=s_hat,
            q_x=q_x, q_p=q_p, q_r=q_r, q_s=q_s, q_z=q_z, iteration=iteration,
        )
        _check_finite(state, iteration)
        if history is not None:
            history.append(state.copy())

        norm_old = float(np.linalg.norm(x_old))
        rel = (
            float(np.linalg.norm(x_hat - x_old)) / norm_old
            if norm_old > 0
            else (0.0 if not np.any(x_hat) else np.inf)
        )
        if iteration == 1:
            rel = np.inf  # nothing denoised yet

        trace.append(
            IterationRecord(
                iteration=iteration,
                q_x=q_x,
                q_p=q_p,
                q_s=q_s,
                q_r=q_r,
                rel_change=rel,
                theta=theta,
                hyper=input_denoiser.hyper(),
                wall_time=time.perf_counter() - tic,
            )
        )

        if iteration > 1 and rel < config.tol:
            converged = True
            break
        theta = next_theta(theta, rel, prev_rel, config.adaptive_damping)
        prev_rel = rel

    return TrainResult(
        weights=WeightMatrix(x_hat),
        trace=trace,
        iterations_run=iteration,
        converged=converged,
        tuning_time=tuning_time,
        state=state,
        state_history=history,
    )
