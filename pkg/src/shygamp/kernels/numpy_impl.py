"""Pure-numpy batch kernels for the likelihood-side moment computations.

These are the reference implementations; ``numba_impl`` mirrors the same
signatures with jitted loops.  All kernels take 0-based labels, float64
arrays, and per-entry variance matrices ``q_p`` of shape (M, D).

Grid-based kernels return ``log_c`` (log of the normalization constant) so
callers can detect underflow without losing the ratio-based moments.
"""

import numpy as np

from ..special import LOG_SQRT_2PI, inv_mills, norm_logcdf

BACKEND = "numpy"


def _softmax_rows(z):
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _log_softmax_rows(z):
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def gm_moments(y, p_hat, q_p, alpha, mu, sigma, n_grid, radius):
    """Posterior moments of the scores under the mixture-of-probit likelihood
    approximation.

    The label coordinate is integrated on a trapezoid grid of ``n_grid``
    points spanning ``radius`` posterior standard deviations; the remaining
    coordinates reduce to closed-form partial moments of a Gaussian times a
    normal cdf.  Returns (z_hat, q_z, log_c).
    """
    m_count, d_count = p_hat.shape
    rows = np.arange(m_count)
    qy = q_p[rows, y]
    py = p_hat[rows, y]
    sq = np.sqrt(qy)

    u = np.linspace(-1.0, 1.0, n_grid)
    c = py[:, None] + radius * sq[:, None] * u[None, :]  # (M, K)
    h = 2.0 * radius * sq / (n_grid - 1)
    log_trap = np.zeros(n_grid)
    log_trap[0] = log_trap[-1] = np.log(0.5)
    log_outer = (
        -0.5 * np.square((c - py[:, None]) / sq[:, None])
        - np.log(sq)[:, None]
        - LOG_SQRT_2PI
        + np.log(h)[:, None]
        + log_trap[None, :]
    )  # (M, K): trapezoid weight times outer normal density

    # Partial moments per mixture component and non-label coordinate.
    s2 = np.square(sigma)[None, None, :, None] + q_p[:, None, None, :]  # (M,1,L,D)
    rs2 = np.sqrt(s2)
    diff = c[:, :, None, None] - p_hat[:, None, None, :]  # (M,K,1,D)
    x = (diff - mu[None, None, :, None]) / rs2
    log_t0 = norm_logcdf(x)  # (M,K,L,D)
    r = inv_mills(x)
    ucoef = q_p[:, None, None, :] / rs2
    m1 = diff + ucoef * r
    m2 = np.square(m1) + q_p[:, None, None, :] - np.square(ucoef) * (x * r + r * r)

    not_y = np.ones((m_count, d_count), dtype=bool)
    not_y[rows, y] = False
    sum_log_t0 = np.sum(
        np.where(not_y[:, None, None, :], log_t0, 0.0), axis=3
    )  # (M,K,L)

    with np.errstate(divide="ignore"):
        log_alpha = np.log(alpha)
    log_w = log_outer[:, :, None] + log_alpha[None, None, :] + sum_log_t0  # (M,K,L)

    w_max = np.max(log_w, axis=(1, 2))
    safe_max = np.where(np.isfinite(w_max), w_max, 0.0)
    w = np.exp(log_w - safe_max[:, None, None])
    w[~np.isfinite(log_w)] = 0.0

    s0 = np.sum(w, axis=(1, 2))
    cexp = c[:, :, None, None]
    g1 = np.where(not_y[:, None, None, :], cexp - m1, cexp)
    g2 = np.where(
        not_y[:, None, None, :],
        np.square(cexp) - 2.0 * cexp * m1 + m2,
        np.square(cexp),
    )
    s1 = np.einsum("mkl,mkld->md", w, g1)
    s2m = np.einsum("mkl,mkld->md", w, g2)

    bad = ~np.isfinite(w_max) | (s0 <= 0.0)
    s0_safe = np.where(bad, 1.0, s0)
    z_hat = s1 / s0_safe[:, None]
    q_z = np.maximum(s2m / s0_safe[:, None] - np.square(z_hat), 0.0)
    with np.errstate(divide="ignore"):
        log_c = np.where(bad, -np.inf, safe_max + np.log(s0_safe))
    z_hat[bad] = p_hat[bad]
    q_z[bad] = 0.0
    return z_hat, q_z, log_c


def is_moments(y, p_hat, q_p, z_std):
    """Self-normalized importance-sampling moments.

    ``z_std`` holds pre-drawn standard normals of shape (M, K, D); samples
    are ``p_hat + sqrt(q_p) * z_std`` and weights are the soft-max
    likelihood of the observed label.
    """
    m_count, k_count, _ = z_std.shape
    rows = np.arange(m_count)
    z = p_hat[:, None, :] + np.sqrt(q_p)[:, None, :] * z_std  # (M,K,D)
    log_lik = _log_softmax_rows(z)[rows[:, None], np.arange(k_count)[None, :], y[:, None]]
    w_max = np.max(log_lik, axis=1)
    w = np.exp(log_lik - w_max[:, None])  # (M,K)
    s0 = np.sum(w, axis=1)
    z_hat = np.einsum("mk,mkd->md", w, z) / s0[:, None]
    s2 = np.einsum("mk,mkd->md", w, np.square(z)) / s0[:, None]
    q_z = np.maximum(s2 - np.square(z_hat), 0.0)
    log_c = w_max + np.log(s0 / k_count)
    return z_hat, q_z, log_c


def ni_moments(y, p_hat, q_p, n_grid, radius, chunk=1 << 18):
    """Trapezoid quadrature over the full D-dimensional hyper-rectangular grid.

    Exponential in D; callers enforce the grid-size guard.
    """
    m_count, d_count = p_hat.shape
    n_points = n_grid**d_count
    z_hat = np.empty((m_count, d_count))
    q_z = np.empty((m_count, d_count))
    log_c = np.empty(m_count)

    u = np.linspace(-1.0, 1.0, n_grid)
    log_trap = np.zeros(n_grid)
    log_trap[0] = log_trap[-1] = np.log(0.5)
    shape = (n_grid,) * d_count

    for m in range(m_count):
        sq = np.sqrt(q_p[m])
        axes = p_hat[m][:, None] + radius * sq[:, None] * u[None, :]  # (D,K)
        h = 2.0 * radius * sq / (n_grid - 1)
        # per-dim log weight: trapezoid rule times the normal density
        lw = (
            log_trap[None, :]
            - 0.5 * np.square((axes - p_hat[m][:, None]) / sq[:, None])
            - np.log(sq)[:, None]
            - LOG_SQRT_2PI
            + np.log(h)[:, None]
        )

        run_max = -np.inf
        s0 = 0.0
        s1 = np.zeros(d_count)
        s2 = np.zeros(d_count)
        for start in range(0, n_points, chunk):
            idx = np.unravel_index(np.arange(start, min(start + chunk, n_points)), shape)
            z = np.empty((len(idx[0]), d_count))
            log_w = np.zeros(len(idx[0]))
            for d in range(d_count):
                z[:, d] = axes[d][idx[d]]
                log_w += lw[d][idx[d]]
            log_q = log_w + _log_softmax_rows(z)[:, y[m]]
            cmax = float(np.max(log_q))
            if cmax > run_max:
                scale = np.exp(run_max - cmax) if np.isfinite(run_max) else 0.0
                s0 *= scale
                s1 *= scale
                s2 *= scale
                run_max = cmax
            w = np.exp(log_q - run_max)
            s0 += float(np.sum(w))
            s1 += w @ z
            s2 += w @ np.square(z)
        if s0 <= 0.0 or not np.isfinite(run_max):
            z_hat[m] = p_hat[m]
            q_z[m] = 0.0
            log_c[m] = -np.inf
            continue
        z_hat[m] = s1 / s0
        q_z[m] = np.maximum(s2 / s0 - np.square(z_hat[m]), 0.0)
        log_c[m] = run_max + np.log(s0)
    return z_hat, q_z, log_c


def newton_moments(y, p_hat, q_p, max_iter, grad_tol):
    """Componentwise-Newton maximization of the per-sample score posterior.

    Maximizes -(1/2) sum_d (z_d - p_hat_d)^2 / q_d + log softmax(z)[y]
    with a backtracking step, then reports the Laplace variance
    1 / (1/q_d + s_d - s_d^2).  Returns (z_hat, q_z, iters, converged).
    """
    m_count, d_count = p_hat.shape
    rows = np.arange(m_count)
    onehot = np.zeros((m_count, d_count))
    onehot[rows, y] = 1.0

    def objective(z):
        return (
            -0.5 * np.sum(np.square(z - p_hat) / q_p, axis=1)
            + _log_softmax_rows(z)[rows, y]
        )

    z = p_hat.copy()
    obj = objective(z)
    iters = np.zeros(m_count, dtype=np.int64)
    converged = np.zeros(m_count, dtype=bool)
    active = np.ones(m_count, dtype=bool)
    for _ in range(max_iter):
        s = _softmax_rows(z)
        g = s - onehot + (z - p_hat) / q_p  # gradient of the negated objective
        converged = np.max(np.abs(g), axis=1) < grad_tol
        active &= ~converged
        if not active.any():
            break
        h = np.square(s) - s - 1.0 / q_p  # always negative
        step = g / h  # ascent direction: -(obj gradient)/(obj curvature)
        iters[active] += 1

        alpha = np.where(active, 1.0, 0.0)
        improved = ~active  # inactive rows need no step
        for _ in range(11):  # halve down to 2**-10
            trial = z + alpha[:, None] * step
            trial_obj = objective(trial)
            good = active & ~improved & (trial_obj > obj)
            z[good] = trial[good]
            obj[good] = trial_obj[good]
            improved |= good
            alpha = np.where(improved, alpha, alpha * 0.5)
            if improved.all():
                break
        stalled = active & ~improved
        active &= ~stalled  # no ascent even at the smallest step

    s = _softmax_rows(z)
    q_z = 1.0 / (1.0 / q_p + s - np.square(s))
    g = s - onehot + (z - p_hat) / q_p
    converged = np.max(np.abs(g), axis=1) < grad_tol
    return z, q_z, iters, converged


def ts_moments(y, p_hat, q_p):
    """Second-order expansion of the likelihood around ``p_hat``.

    Returns (z_hat, q_z, c, ok) where ``ok`` flags samples whose expansion
    kept a positive normalizer; the others are the documented breakdown.
    """
    m_count, d_count = p_hat.shape
    rows = np.arange(m_count)
    s = _softmax_rows(p_hat)
    f = s[rows, y]
    onehot = np.zeros((m_count, d_count))
    onehot[rows, y] = 1.0
    delta = onehot - s
    g = f[:, None] * delta
    hess = f[:, None] * (np.square(delta) - s * (1.0 - s))

    hq = np.sum(hess * q_p, axis=1)  # sum_k H_k q_k
    c = f + 0.5 * hq
    ok = c > 0.0
    c_safe = np.where(ok, c, 1.0)

    s1 = f[:, None] * p_hat + g * q_p + 0.5 * p_hat * hq[:, None]
    z_hat = s1 / c_safe[:, None]
    s2 = (
        f[:, None] * (np.square(p_hat) + q_p)
        + 2.0 * p_hat * g * q_p
        + 0.5 * np.square(p_hat) * hq[:, None]
        + 0.5 * q_p * (hq[:, None] - hess * q_p)
        + 1.5 * hess * np.square(q_p)
    )
    q_z = s2 / c_safe[:, None] - np.square(z_hat)
    ok &= np.all(np.isfinite(z_hat), axis=1) & np.all(np.isfinite(q_z), axis=1)
    q_z = np.maximum(q_z, 0.0)
    return z_hat, q_z, c, ok
