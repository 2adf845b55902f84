"""Multivariate probit likelihood of the zero/positive pattern.

The orthant probability Pr(sign(r) = 2y'-1), r ~ N(mu, I + C C^T), equals
E_w[prod_j Phi(u_j w_j)] with w ~ N(mu, C C^T) and u_j = 2y'_j - 1. It is
estimated with K reparameterised draws w = mu + C v, so the estimate is
differentiable in mu and C.
"""

import numpy as np

from . import probcore
from .autodiff import Tensor, log_mean_exp, log_ndtr
from .errors import UsageError


def binary_pattern(y):
    return (np.asarray(y) > 0).astype(np.float64)


def draw_noise(rng, batch, k, dim):
    return rng.normal((batch, k, dim))


def mvp_log_likelihood(mu, factor, y_bin, k=64, rng=None, noise=None):
    """Monte-Carlo log Pr(y' | mu, Sigma) for each row.

    mu : (B, L) or (L,) tensor/array of latent means.
    factor : (L, L) tensor/array C with Sigma = I + C C^T.
    y_bin : 0/1 pattern with the shape of ``mu``.
    noise : optional (B, K, L) standard-normal draws; drawn from ``rng``
        when absent.

    Returns a (B,) tensor (0-d for a single row).
    """
    mu = mu if isinstance(mu, Tensor) else Tensor(mu)
    factor = factor if isinstance(factor, Tensor) else Tensor(factor)
    single = mu.ndim == 1
    if single:
        mu = mu.reshape(1, -1)
    y_bin = np.atleast_2d(np.asarray(y_bin, dtype=np.float64))
    B, L = mu.shape
    if y_bin.shape != (B, L) or factor.shape != (L, L):
        raise UsageError(
            f"shape mismatch: mu {mu.shape}, y' {y_bin.shape}, factor {factor.shape}")
    if noise is None:
        if rng is None:
            raise UsageError("either rng or noise is required")
        if k < 1:
            raise UsageError("k must be >= 1")
        noise = draw_noise(rng, B, k, L)
    noise = np.asarray(noise, dtype=np.float64)
    w = mu.reshape(B, 1, L) + Tensor(noise) @ factor.T
    # log Phi(u w) = y' log Phi(w) + (1 - y') log(1 - Phi(w)) for y' in {0, 1}
    signs = (2.0 * y_bin - 1.0)[:, None, :]
    per_sample = log_ndtr(w * signs).sum(axis=2)
    out = log_mean_exp(per_sample, axis=1)
    return out.reshape(()) if single else out


def positive_probabilities(mu, sigma):
    """Marginals Pr(r_j > 0) = Phi(mu_j / sqrt(Sigma_jj)); ``mu`` may be (B, L)."""
    mu = np.asarray(mu, dtype=np.float64)
    scale = np.sqrt(np.diag(np.asarray(sigma, dtype=np.float64)))
    return probcore.std_normal_cdf(mu / scale)
