"""Numerically stable standard-normal helpers.

The moment computations need log Phi(x) and the inverse Mills ratio
phi(x)/Phi(x) far into the lower tail, where direct evaluation underflows.
"""

import numpy as np
from scipy import special as _sp

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_INV_SQRT2 = 1.0 / np.sqrt(2.0)


def norm_pdf(x):
    return np.exp(-0.5 * np.square(x) - LOG_SQRT_2PI)


def norm_logpdf(x):
    return -0.5 * np.square(x) - LOG_SQRT_2PI


def norm_cdf(x):
    return _sp.ndtr(x)


def norm_logcdf(x):
    return _sp.log_ndtr(x)


def inv_mills(x):
    """phi(x)/Phi(x), accurate for arbitrarily negative x (via erfcx)."""
    return _SQRT_2_OVER_PI / _sp.erfcx(-np.asarray(x, dtype=float) * _INV_SQRT2)
