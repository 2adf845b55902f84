"""Likelihoods of the positive part of a label row.

Continuous labels: log y+ ~ N(mu'+, Sigma'+), scored on the log scale.
Counts: y+_j ~ Poisson(lambda_j) with log lambda ~ N(mu', Sigma'), the
rate integrated out by Monte Carlo.
"""

import numpy as np
from scipy import special

from .autodiff import Tensor, exp, gaussian_logpdf_masked, log_mean_exp
from .errors import DataError, NumericalError, UsageError

LOG_RATE_LIMIT = 700.0


def log_factorial(n):
    n = np.asarray(n, dtype=np.float64)
    out = special.gammaln(n + 1.0)
    return out if out.ndim else float(out)


def positive_mask(y):
    return (np.asarray(y) > 0).astype(np.float64)


def _rows(mu, y, mask):
    mu = mu if isinstance(mu, Tensor) else Tensor(mu)
    single = mu.ndim == 1
    if single:
        mu = mu.reshape(1, -1)
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    mask = positive_mask(y) if mask is None else np.atleast_2d(np.asarray(mask, dtype=np.float64))
    if y.shape != mu.shape or mask.shape != mu.shape:
        raise UsageError(f"shape mismatch: mu {mu.shape}, y {y.shape}, mask {mask.shape}")
    return mu, y, mask, single


def mlnd_log_density(mu, sigma, y, mask=None):
    """log phi(log y+ | mu'+, Sigma'+) per row, positives selected by ``mask``.

    The change-of-variables Jacobian -sum(log y+) is not included; it does
    not depend on the parameters. ``sigma`` is the full L x L Sigma'.
    Rows with an empty mask score 0.
    """
    mu, y, mask, single = _rows(mu, y, mask)
    sel = mask > 0
    if np.any(y[sel] <= 0):
        r, c = np.argwhere(sel & (y <= 0))[0]
        raise DataError(f"non-positive value {y[r, c]!r} in positive part (row {r}, column {c})")
    logy = np.zeros_like(y)
    logy[sel] = np.log(y[sel])
    out = gaussian_logpdf_masked(Tensor(logy) - mu, sigma, mask)
    return out.reshape(()) if single else out


def draw_rate_noise(rng, batch, k, dim):
    return rng.normal((batch, k, dim)), rng.normal((batch, k, dim))


def poisson_log_likelihood_from_log_rates(log_rates, y, mask=None):
    """log mean_k prod_j Poisson(y_j; exp(log_rates[..., k, j])) over masked j.

    ``log_rates`` is (B, K, L) (or (K, L) for one row); the K axis is
    averaged in probability space.
    """
    log_rates = log_rates if isinstance(log_rates, Tensor) else Tensor(log_rates)
    single = log_rates.ndim == 2
    if single:
        log_rates = log_rates.reshape(1, *log_rates.shape)
    B, _, L = log_rates.shape
    y = np.asarray(y, dtype=np.float64).reshape(B, L)
    mask = positive_mask(y) if mask is None else np.asarray(mask, dtype=np.float64).reshape(B, L)
    if np.max(log_rates.value, initial=-np.inf) > LOG_RATE_LIMIT:
        raise NumericalError(f"log rate exceeds {LOG_RATE_LIMIT}: rate overflow")
    yk = y[:, None, :]
    mk = mask[:, None, :]
    terms = (log_rates * (yk * mk) - exp(log_rates) * mk - log_factorial(y)[:, None, :] * mk)
    out = log_mean_exp(terms.sum(axis=2), axis=1)
    return out.reshape(()) if single else out


def poisson_lognormal_log_likelihood(mu, factor, y, k=64, rng=None, mask=None, noise=None):
    """Monte-Carlo log-likelihood of counts with log-normal rates, per row.

    Log rates are drawn in all L coordinates as mu' + z + C' v (z, v
    standard normal), i.e. from N(mu', I + C' C'^T), and then restricted to
    the masked coordinates. ``noise`` is an optional (z, v) pair of
    (B, K, L) arrays.
    """
    mu, y, mask, single = _rows(mu, y, mask)
    factor = factor if isinstance(factor, Tensor) else Tensor(factor)
    B, L = mu.shape
    sel = mask > 0
    if np.any(y[sel] != np.round(y[sel])) or np.any(y < 0):
        raise DataError("count likelihood needs nonnegative integer labels")
    if noise is None:
        if rng is None:
            raise UsageError("either rng or noise is required")
        noise = draw_rate_noise(rng, B, k, L)
    z, v = (np.asarray(a, dtype=np.float64) for a in noise)
    log_rates = mu.reshape(B, 1, L) + (Tensor(z) + Tensor(v) @ factor.T)
    out = poisson_log_likelihood_from_log_rates(log_rates, y, mask)
    return out.reshape(()) if single else out
