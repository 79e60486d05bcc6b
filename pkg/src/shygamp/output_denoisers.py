"""Likelihood-side computations for the soft-max observation model.

Sum-product message passing needs the posterior mean and variance of the
score vector z given one observed label and a diagonal Gaussian prior
N(p_hat, diag(q_p)); min-sum needs the corresponding MAP point.  This module
provides four interchangeable sum-product moment methods (Gaussian-mixture
probit approximation, importance sampling, grid quadrature, second-order
expansion), the componentwise-Newton MAP solver, and a high-resolution
quadrature oracle used by the tests.

Labels are 1-based everywhere in the public API.
"""

from __future__ import annotations

import dataclasses
import os
import tempfile
from pathlib import Path

import numpy as np
from scipy import optimize
from scipy.special import ndtr

from . import kernels
from .errors import (
    DegenerateLikelihoodError,
    DimensionError,
    GmFitError,
    GridGuardError,
    TaylorBreakdownError,
)
from .kernels import numpy_impl
from .special import inv_mills, norm_logcdf

NI_GRID_GUARD = 10**8
BRUTEFORCE_MAX_CLASSES = 5


def softmax(z: np.ndarray) -> np.ndarray:
    """Soft-max probabilities exp(z_d) / sum_k exp(z_k), max-subtracted."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax requires finite scores")
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


@dataclasses.dataclass(frozen=True)
class MomentResult:
    """Posterior mean, per-coordinate variance, and normalization constant."""

    z_hat: np.ndarray
    q_z: np.ndarray
    c: float


@dataclasses.dataclass(frozen=True)
class GmLikApprox:
    """Mixture-of-probit approximation to the soft-max likelihood.

    In the difference coordinates gamma_k = z_y - z_k (k != y) the
    likelihood 1 / (1 + sum_k exp(-gamma_k)) is approximated by
    sum_l alpha_l * prod_k Phi((gamma_k - mu_l) / sigma_l); the location and
    scale are shared across k because the target is symmetric in gamma.
    """

    num_classes: int
    alpha: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    fit_error: float
    grid_spec: str = ""

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if abs(float(np.sum(alpha)) - 1.0) > 1e-10 or np.any(alpha < 0):
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if np.any(sigma <= 0):
            raise ValueError("mixture scales must be positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def num_components(self) -> int:
        return self.alpha.shape[0]


# ---------------------------------------------------------------------------
# offline mixture fit


def _default_cache_dir() -> Path:
    env = os.environ.get("SHYGAMP_CACHE_DIR")
    if env:
        return Path(env)
    base = os.environ.get("XDG_CACHE_HOME", str(Path.home() / ".cache"))
    return Path(base) / "shygamp"


def _cache_path(cache_dir: Path, d: int, l: int) -> Path:
    return cache_dir / f"softmax_gm_fit_D{d}_L{l}.txt"


def _write_fit_cache(path: Path, approx: GmLikApprox) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    body = "\n".join(
        [
            "shygamp-gm-fit v1",
            f"num_classes={approx.num_classes}",
            f"num_components={approx.num_components}",
            f"fit_error={approx.fit_error!r}",
            "alpha=" + " ".join(repr(v) for v in approx.alpha),
            "mu=" + " ".join(repr(v) for v in approx.mu),
            "sigma=" + " ".join(repr(v) for v in approx.sigma),
            f"grid={approx.grid_spec}",
            "",
        ]
    )
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(body)
        os.replace(tmp, path)  # atomic on POSIX
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_fit_cache(path: Path) -> GmLikApprox | None:
    try:
        lines = path.read_text().splitlines()
    except OSError:
        return None
    if not lines or lines[0].strip() != "shygamp-gm-fit v1":
        return None
    fields = {}
    for line in lines[1:]:
        if "=" in line:
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
    try:
        return GmLikApprox(
            num_classes=int(fields["num_classes"]),
            alpha=np.array([float(v) for v in fields["alpha"].split()]),
            mu=np.array([float(v) for v in fields["mu"].split()]),
            sigma=np.array([float(v) for v in fields["sigma"].split()]),
            fit_error=float(fields["fit_error"]),
            grid_spec=fields.get("grid", ""),
        )
    except (KeyError, ValueError):
        return None


def _fit_grid(num_classes: int, span: float = 8.0, max_points: int = 100_000):
    """Deterministic grid over the (D-1)-dim difference space [-span, span]."""
    k = num_classes - 1
    per_axis = max(int(max_points ** (1.0 / k)), 17) if k > 1 else 2001
    if per_axis**k <= max_points:
        axes = [np.linspace(-span, span, per_axis)] * k
        mesh = np.meshgrid(*axes, indexing="ij")
        grid = np.stack([m.ravel() for m in mesh], axis=1)
        spec = f"[-{span},{span}]^{k} product grid, {per_axis} per axis"
    else:
        # subsample the implicit product grid with a fixed seed
        rng = np.random.default_rng(20231115)
        axis = np.linspace(-span, span, per_axis)
        grid = axis[rng.integers(0, per_axis, size=(max_points, k))]
        spec = (
            f"[-{span},{span}]^{k} grid, {per_axis} per axis, "
            f"{max_points} subsampled points (seed 20231115)"
        )
    return grid, spec


def _simplex_lstsq(g: np.ndarray, t: np.ndarray) -> np.ndarray:
    """min ||g a - t||^2 over the probability simplex, by support enumeration."""
    n = g.shape[1]
    gtg = g.T @ g
    gtt = g.T @ t
    best = None
    best_sse = np.inf
    for mask in range(1, 1 << n):
        idx = [i for i in range(n) if mask >> i & 1]
        k = len(idx)
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = 2.0 * gtg[np.ix_(idx, idx)]
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        rhs = np.concatenate([2.0 * gtt[idx], [1.0]])
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        a_sub = sol[:k]
        if np.any(a_sub < -1e-9):
            continue
        a = np.zeros(n)
        a[idx] = np.clip(a_sub, 0.0, None)
        total = a.sum()
        if total <= 0:
            continue
        a /= total
        sse = float(a @ gtg @ a - 2.0 * a @ gtt + t @ t)
        if sse < best_sse:
            best_sse = sse
            best = a
    if best is None:  # cannot happen for nonempty g, kept as a belt
        best = np.full(n, 1.0 / n)
    return best


def _mixture_columns(grid, mu, sigma):
    return np.prod(ndtr((grid[:, :, None] - mu) / sigma), axis=1)


def _descend(grid, target, mu, sigma, span):
    """Coordinate descent on (mu_l, sigma_l) with exact alpha refits."""
    mu = mu.copy()
    sigma = sigma.copy()
    cols = _mixture_columns(grid, mu, sigma)

    def sse_with(col, l):
        trial = cols.copy()
        trial[:, l] = col
        a = _simplex_lstsq(trial, target)
        return float(np.sum(np.square(trial @ a - target))), a

    alpha = _simplex_lstsq(cols, target)
    best = float(np.sum(np.square(cols @ alpha - target)))
    for _ in range(6):
        improved = best
        for l in range(mu.shape[0]):
            res = optimize.minimize_scalar(
                lambda v: sse_with(
                    np.prod(ndtr((grid - v) / sigma[l]), axis=1), l
                )[0],
                bounds=(-span, span),
                method="bounded",
                options={"xatol": 1e-3},
            )
            if res.fun < best:
                mu[l] = res.x
                cols[:, l] = np.prod(ndtr((grid - mu[l]) / sigma[l]), axis=1)
                best = res.fun
            res = optimize.minimize_scalar(
                lambda v: sse_with(
                    np.prod(ndtr((grid - mu[l]) / v), axis=1), l
                )[0],
                bounds=(0.05, 8.0),
                method="bounded",
                options={"xatol": 1e-3},
            )
            if res.fun < best:
                sigma[l] = res.x
                cols[:, l] = np.prod(ndtr((grid - mu[l]) / sigma[l]), axis=1)
                best = res.fun
        if improved - best < 1e-10:
            break
    alpha = _simplex_lstsq(cols, target)
    best = float(np.sum(np.square(cols @ alpha - target)))
    return alpha, mu, sigma, best


def fit_softmax_gm_approx(
    num_classes: int,
    num_components: int = 2,
    cache_dir: str | Path | None = None,
    use_cache: bool = True,
    max_sup_error: float = 0.2,
) -> GmLikApprox:
    """Fit (or load) the mixture-of-probit likelihood approximation.

    Least-squares fit over a deterministic grid with multi-start coordinate
    descent; the L-component fit always includes the (L-1)-component
    solution as one start, so adding components cannot hurt.  Results are
    cached on disk per (num_classes, num_components).
    """
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if num_components < 1:
        raise ValueError("need at least one mixture component")
    cdir = Path(cache_dir) if cache_dir is not None else _default_cache_dir()
    path = _cache_path(cdir, num_classes, num_components)
    if use_cache:
        cached = _read_fit_cache(path)
        if cached is not None:
            return cached

    grid, spec = _fit_grid(num_classes)
    target = 1.0 / (1.0 + np.sum(np.exp(-grid), axis=1))

    starts = [
        (np.zeros(num_components), np.full(num_components, 1.702)),
    ]
    if num_components > 1:
        nested = fit_softmax_gm_approx(
            num_classes, num_components - 1, cache_dir=cdir, use_cache=use_cache
        )
        top = int(np.argmax(nested.alpha))
        starts.append(
            (
                np.append(nested.mu, nested.mu[top]),
                np.append(nested.sigma, nested.sigma[top] * 0.5),
            )
        )
    for s in range(5):
        rng = np.random.default_rng(7000 + 97 * s)
        starts.append(
            (
                rng.uniform(-2.0, 2.0, num_components),
                rng.uniform(0.3, 3.0, num_components),
            )
        )

    best = None
    for mu0, sigma0 in starts:
        alpha, mu, sigma, sse = _descend(grid, target, mu0, sigma0, span=8.0)
        if best is None or sse < best[3]:
            best = (alpha, mu, sigma, sse)
    alpha, mu, sigma, _ = best
    resid = _mixture_columns(grid, mu, sigma) @ alpha - target
    sup = float(np.max(np.abs(resid)))
    if sup > max_sup_error:
        raise GmFitError(
            f"mixture fit residual {sup:.3g} exceeds {max_sup_error} "
            f"for D={num_classes}, L={num_components}"
        )
    approx = GmLikApprox(
        num_classes=num_classes,
        alpha=alpha,
        mu=mu,
        sigma=sigma,
        fit_error=sup,
        grid_spec=spec,
    )
    if use_cache:
        _write_fit_cache(path, approx)
    return approx


def gm_mixture_value(approx: GmLikApprox, gamma: np.ndarray) -> np.ndarray:
    """Evaluate the fitted mixture on difference-space points (.., D-1)."""
    gamma = np.atleast_2d(np.asarray(gamma, dtype=np.float64))
    return _mixture_columns(gamma, approx.mu, approx.sigma) @ approx.alpha


# ---------------------------------------------------------------------------
# partial moments


def gaussian_cdf_partial_moments(c, p_hat, q, mu, sigma):
    """Moments T_i = int gamma^i N(gamma; c - p_hat, q) Phi((gamma - mu)/sigma).

    Closed form with x = (c - p_hat - mu) / sqrt(sigma^2 + q); evaluated via
    the inverse Mills ratio so the lower tail stays accurate.
    """
    c, p_hat, q, mu, sigma = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (c, p_hat, q, mu, sigma))
    )
    if np.any(q <= 0) or np.any(sigma <= 0):
        raise ValueError("variances and scales must be positive")
    s2 = np.square(sigma) + q
    rs2 = np.sqrt(s2)
    x = (c - p_hat - mu) / rs2
    t0 = np.exp(norm_logcdf(x))
    r = inv_mills(x)
    u = q / rs2
    mean = (c - p_hat) + u * r
    second = np.square(mean) + q - np.square(u) * (x * r + r * r)
    return t0, t0 * mean, t0 * second


# ---------------------------------------------------------------------------
# per-sample moment methods


def _check_inputs(y, p_hat, q_p):
    p_hat = np.asarray(p_hat, dtype=np.float64).ravel()
    d = p_hat.shape[0]
    if d < 2:
        raise DimensionError("need at least two classes")
    q_p = np.broadcast_to(np.asarray(q_p, dtype=np.float64), (d,)).copy()
    if np.any(q_p <= 0):
        raise ValueError("q_p must be positive entrywise")
    if not (1 <= int(y) <= d):
        raise ValueError(f"label {y} outside [1, {d}]")
    return int(y) - 1, p_hat, q_p


def _single(fn, y0, p_hat, q_p, *args, **kwargs):
    z, qz, log_c = fn(
        np.array([y0], dtype=np.int64),
        p_hat[None, :],
        q_p[None, :],
        *args,
        **kwargs,
    )
    if not np.isfinite(log_c[0]):
        raise DegenerateLikelihoodError("likelihood mass underflowed to zero")
    return MomentResult(z_hat=z[0], q_z=qz[0], c=float(np.exp(log_c[0])))


def spa_moments_gm(y, p_hat, q_p, approx: GmLikApprox, n_grid: int = 7,
                   radius: float = 4.0) -> MomentResult:
    """Gaussian-mixture method: closed-form inner moments, 1-D outer grid."""
    y0, p_hat, q_p = _check_inputs(y, p_hat, q_p)
    if approx.num_classes != p_hat.shape[0]:
        raise DimensionError(
            f"approximation fitted for D={approx.num_classes}, "
            f"scores have D={p_hat.shape[0]}"
        )
    return _single(
        kernels.active.gm_moments, y0, p_hat, q_p,
        approx.alpha, approx.mu, approx.sigma, n_grid, radius,
    )


def spa_moments_is(y, p_hat, q_p, n_samples: int = 1500, seed: int = 0) -> MomentResult:
    """Importance sampling from N(p_hat, diag(q_p)) with likelihood weights."""
    y0, p_hat, q_p = _check_inputs(y, p_hat, q_p)
    rng = np.random.default_rng(seed)
    z_std = rng.standard_normal((1, n_samples, p_hat.shape[0]))
    return _single(kernels.active.is_moments, y0, p_hat, q_p, z_std)


def spa_moments_ni(y, p_hat, q_p, n_grid: int = 7, radius: float = 4.0) -> MomentResult:
    """Trapezoid quadrature on the full D-dimensional grid (small D only)."""
    y0, p_hat, q_p = _check_inputs(y, p_hat, q_p)
    if n_grid ** p_hat.shape[0] > NI_GRID_GUARD:
        raise GridGuardError(
            f"grid of {n_grid}^{p_hat.shape[0]} points exceeds {NI_GRID_GUARD:g}"
        )
    return _single(kernels.active.ni_moments, y0, p_hat, q_p, n_grid, radius)


def spa_moments_ts(y, p_hat, q_p) -> MomentResult:
    """Second-order expansion about p_hat; exact Gaussian moments of the
    quadratic surrogate.  Breaks down (raises) once the curvature term
    drives the normalizer non-positive."""
    y0, p_hat, q_p = _check_inputs(y, p_hat, q_p)
    z, qz, c, ok = numpy_impl.ts_moments(
        np.array([y0], dtype=np.int64), p_hat[None, :], q_p[None, :]
    )
    if not ok[0]:
        raise TaylorBreakdownError(
            f"expansion normalizer {c[0]:.3g} is not positive"
        )
    return MomentResult(z_hat=z[0], q_z=qz[0], c=float(c[0]))


def msa_z_newton(y, p_hat, q_p, max_iter: int = 50, grad_tol: float = 1e-8):
    """Componentwise-Newton MAP scores and Laplace variances.

    Returns (z_hat, q_z, converged); a False flag means the gradient
    tolerance was not reached within ``max_iter`` steps and the best
    iterate is returned.
    """
    y0, p_hat, q_p = _check_inputs(y, p_hat, q_p)
    z, qz, _, conv = kernels.active.newton_moments(
        np.array([y0], dtype=np.int64), p_hat[None, :], q_p[None, :],
        max_iter, grad_tol,
    )
    return z[0], qz[0], bool(conv[0])


def moments_bruteforce(y, p_hat, q_p, n_grid: int = 41, radius: float = 6.0) -> MomentResult:
    """High-resolution dense-grid oracle (pure numpy, independent of the
    jitted backend).  Guarded to D <= 5."""
    y0, p_hat, q_p = _check_inputs(y, p_hat, q_p)
    if p_hat.shape[0] > BRUTEFORCE_MAX_CLASSES:
        raise GridGuardError(
            f"brute-force oracle limited to D<={BRUTEFORCE_MAX_CLASSES}"
        )
    return _single(numpy_impl.ni_moments, y0, p_hat, q_p, n_grid, radius)


# ---------------------------------------------------------------------------
# batch entry points used by the engine and benchmarks


def gm_moments_batch(labels, p_hat, q_p, approx: GmLikApprox, n_grid=7, radius=4.0):
    y0 = np.asarray(labels, dtype=np.int64) - 1
    return kernels.active.gm_moments(
        y0, p_hat, q_p, approx.alpha, approx.mu, approx.sigma, n_grid, radius
    )


def is_moments_batch(labels, p_hat, q_p, n_samples, rng, max_block=2 * 10**7):
    """Chunk the pre-drawn normals so memory stays bounded at large M."""
    y0 = np.asarray(labels, dtype=np.int64) - 1
    m_count, d_count = p_hat.shape
    rows_per = max(1, int(max_block // (n_samples * d_count)))
    z = np.empty((m_count, d_count))
    qz = np.empty((m_count, d_count))
    log_c = np.empty(m_count)
    for start in range(0, m_count, rows_per):
        stop = min(start + rows_per, m_count)
        z_std = rng.standard_normal((stop - start, n_samples, d_count))
        z[start:stop], qz[start:stop], log_c[start:stop] = kernels.active.is_moments(
            y0[start:stop], p_hat[start:stop], q_p[start:stop], z_std
        )
    return z, qz, log_c


def ni_moments_batch(labels, p_hat, q_p, n_grid=7, radius=4.0):
    y0 = np.asarray(labels, dtype=np.int64) - 1
    if n_grid ** p_hat.shape[1] > NI_GRID_GUARD:
        raise GridGuardError(
            f"grid of {n_grid}^{p_hat.shape[1]} points exceeds {NI_GRID_GUARD:g}"
        )
    return kernels.active.ni_moments(y0, p_hat, q_p, n_grid, radius)


def ts_moments_batch(labels, p_hat, q_p):
    y0 = np.asarray(labels, dtype=np.int64) - 1
    return numpy_impl.ts_moments(y0, p_hat, q_p)


def newton_moments_batch(labels, p_hat, q_p, max_iter=50, grad_tol=1e-8):
    y0 = np.asarray(labels, dtype=np.int64) - 1
    return kernels.active.newton_moments(y0, p_hat, q_p, max_iter, grad_tol)
