"""Gaussian and [0,1]-truncated Gaussian densities, log-space first.

All functions broadcast over numpy arrays. Log-space forms are the
canonical interface; linear-space forms are conveniences on top.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DegeneracyError

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

# Truncation mass below this is treated as numerically degenerate.
MASS_FLOOR = 1e-300

# Samples from the truncated normal are kept strictly inside (0, 1) by
# this margin so downstream normalization never produces exact zeros.
EPS_X = 1e-12


def _as_float_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _maybe_scalar(a: np.ndarray, *inputs):
    if all(np.ndim(x) == 0 for x in inputs):
        return float(a)
    return a


def normal_logpdf(x, mu, sigma):
    """Log density of N(mu, sigma^2) at x. Requires sigma > 0."""
    x, mu, sigma = map(_as_float_array, (x, mu, sigma))
    if np.any(sigma <= 0.0):
        raise ValueError("sigma must be positive")
    z = (x - mu) / sigma
    out = -0.5 * z * z - np.log(sigma) - LOG_SQRT_2PI
    return _maybe_scalar(out, x, mu, sigma)


def normal_pdf(x, mu, sigma):
    """Density of N(mu, sigma^2) at x."""
    out = np.exp(normal_logpdf(x, mu, sigma))
    return float(out) if np.ndim(out) == 0 else out


def truncnorm_mass(mu, sigma):
    """Probability mass Phi((1-mu)/sigma) - Phi((0-mu)/sigma) of N(mu, sigma^2) on [0, 1].

    Evaluated through the survival function when the interval lies in the
    upper tail, so the difference does not cancel to zero prematurely.
    Raises DegeneracyError when the mass underflows below 1e-300.
    """
    mu, sigma = map(_as_float_array, (mu, sigma))
    if np.any(sigma <= 0.0):
        raise ValueError("sigma must be positive")
    a = (0.0 - mu) / sigma
    b = (1.0 - mu) / sigma
    # both tails: pick the representation that avoids 1-1 cancellation
    upper = ndtr(-a) - ndtr(-b)  # accurate when a > 0
    lower = ndtr(b) - ndtr(a)    # accurate when b < 0 or the interval straddles 0
    mass = np.where(a > 0.0, upper, lower)
    if np.any(mass < MASS_FLOOR):
        raise DegeneracyError(
            "truncation mass underflow: mean too far outside [0, 1] for the given sigma"
        )
    return _maybe_scalar(mass, mu, sigma)


def truncnorm_logpdf(x, mu, sigma):
    """Log density of N(mu, sigma^2) truncated to [0, 1]; -inf outside the support."""
    x, mu, sigma = map(_as_float_array, (x, mu, sigma))
    log_mass = np.log(truncnorm_mass(mu, sigma))
    body = normal_logpdf(x, mu, sigma) - log_mass
    out = np.where((x < 0.0) | (x > 1.0), -np.inf, body)
    return _maybe_scalar(out, x, mu, sigma)


def truncnorm_pdf(x, mu, sigma):
    """Density of N(mu, sigma^2) truncated to [0, 1]; zero outside the support."""
    out = np.exp(truncnorm_logpdf(x, mu, sigma))
    return float(out) if np.ndim(out) == 0 else out


def truncnorm_transform(u, mu, sigma):
    """Map uniforms u in [0, 1] through the inverse CDF of the [0,1]-truncated normal.

    Computes Phi^{-1}(Phi(a) + u * (Phi(b) - Phi(a))) * sigma + mu with
    a = -mu/sigma, b = (1-mu)/sigma, rearranged into whichever tail keeps
    the CDF argument well away from the floating-point saturation at 1.
    Results are clamped to (EPS_X, 1 - EPS_X).
    """
    u, mu, sigma = map(_as_float_array, (u, mu, sigma))
    if np.any(sigma <= 0.0):
        raise ValueError("sigma must be positive")
    a = (0.0 - mu) / sigma
    b = (1.0 - mu) / sigma
    mass = np.asarray(truncnorm_mass(mu, sigma))

    # upper tail (mu < 0): work with survival probabilities
    sa = ndtr(-a)
    q_upper = sa - u * mass
    x_upper = -ndtri(np.clip(q_upper, 1e-308, 1.0)) * sigma + mu

    # lower tail and straddling cases: plain CDF space
    pa = ndtr(a)
    p_lower = pa + u * mass
    x_lower = ndtri(np.clip(p_lower, 1e-308, 1.0 - 1e-16)) * sigma + mu

    x = np.where(a > 0.0, x_upper, x_lower)
    out = np.clip(x, EPS_X, 1.0 - EPS_X)
    return _maybe_scalar(out, u, mu, sigma)
