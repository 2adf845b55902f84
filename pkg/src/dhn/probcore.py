"""Probability primitives on plain numpy arrays.

Normal CDF/log-CDF, Cholesky, seeded sampling streams, the max-shifted
log-mean-exp, and a low-dimensional quadrature oracle for orthant
probabilities (used by tests to check the Monte-Carlo estimators).
"""

import math

import numpy as np
from scipy import integrate, special

from .errors import NumericalError, UsageError

LOG_CDF_BOUND = 40.0
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def sigmoid(x):
    return special.expit(x)


def std_normal_pdf(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-0.5 * x * x - _LOG_SQRT_2PI)


def log_std_normal_pdf(x):
    x = np.asarray(x, dtype=np.float64)
    return -0.5 * x * x - _LOG_SQRT_2PI


def std_normal_cdf(x):
    """Phi(x) through the complementary error function.

    Evaluating ``0.5 * erfc(-x / sqrt 2)`` keeps full relative precision in the
    lower tail, so Phi(-8) is ~6.2e-16 rather than a rounded 1 - Phi(8).
    """
    x = np.asarray(x, dtype=np.float64)
    out = 0.5 * special.erfc(-x / math.sqrt(2.0))
    return out if out.ndim else float(out)


def _log_cdf_lower_tail(x):
    # erfc(t) = erfcx(t) * exp(-t^2); erfcx does not underflow
    t = -x / math.sqrt(2.0)
    return np.log(0.5 * special.erfcx(t)) - t * t


def log_std_normal_cdf(x):
    """log Phi(x) for |x| <= 40.

    Uses ``log1p(-Q(x))`` for x >= 0, ``log(erfc)`` on [-10, 0) and the
    scaled complementary error function below -10, so the lower tail never
    rounds to -inf. Inputs outside [-40, 40] raise :class:`NumericalError`;
    in training they only appear when the optimisation has diverged.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.abs(x) <= LOG_CDF_BOUND):
        bad = float(x[~(np.abs(x) <= LOG_CDF_BOUND)].ravel()[0])
        raise NumericalError(f"log Phi argument {bad!r} outside [-40, 40]")
    upper = x >= 0.0
    tail = x < -10.0
    mid = ~upper & ~tail
    out = np.empty_like(x)
    out[upper] = np.log1p(-0.5 * special.erfc(x[upper] / math.sqrt(2.0)))
    out[mid] = np.log(0.5 * special.erfc(-x[mid] / math.sqrt(2.0)))
    out[tail] = _log_cdf_lower_tail(x[tail])
    return out if out.ndim else float(out)


def logsumexp(values, axis=None):
    v = np.asarray(values, dtype=np.float64)
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def log_sum_exp_mean(values, axis=None):
    """log((1/k) * sum(exp(values))) with max-shift; exact for k == 1."""
    v = np.asarray(values, dtype=np.float64)
    k = v.size if axis is None else v.shape[axis]
    if k < 1:
        raise UsageError("log_sum_exp_mean needs at least one value")
    if k == 1:
        return float(v.reshape(())) if axis is None else np.squeeze(v, axis=axis)
    return logsumexp(v, axis=axis) - math.log(k)


def cholesky(a, tol=1e-12):
    """Lower-triangular L with L @ L.T == a.

    Raises :class:`NumericalError` naming the first pivot that is not
    larger than ``tol``.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise UsageError(f"cholesky needs a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0.0, atol=tol):
        raise UsageError("cholesky input is not symmetric")
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > tol:
            raise NumericalError(f"matrix not positive definite: pivot {j} is {pivot:.3g}")
        L[j, j] = math.sqrt(pivot)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def batched_cholesky(a):
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"batched Cholesky failed: {exc}") from exc


class RngStream:
    """Seeded, splittable generator (Philox counter-based bit generator).

    ``RngStream(seed).child(epoch, batch)`` gives a stream that depends only
    on the seed and the path, never on how many draws other streams made.
    """

    def __init__(self, seed, path=()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, *path):
        return RngStream(self.seed, self.path + tuple(path))

    def normal(self, size):
        return self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"


def sample_mvn(mean, factor, rng, k):
    """k draws of ``mean + factor @ v`` with v ~ N(0, I).

    ``mean`` and ``factor`` may be autodiff tensors; the draw is then
    differentiable through both (reparameterisation). Returns (k, n).
    """
    n = factor.shape[0]
    if mean.shape[-1] != n or factor.shape[1] != n:
        raise UsageError(f"dimension mismatch: mean {mean.shape}, factor {factor.shape}")
    v = rng.normal((k, n))
    return mean + v @ factor.T


def orthant_oracle(mean, cov, signs):
    """Pr(sign_j * r_j >= 0 for all j), r ~ N(mean, cov), by nested quadrature.

    Test-only reference for dimension <= 3. The first coordinate is
    integrated numerically and the rest handled recursively through the
    conditional Gaussian.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    signs = np.atleast_1d(np.asarray(signs, dtype=np.float64))
    n = mean.size
    if n > 3:
        raise UsageError("orthant_oracle supports dimension <= 3")
    # flip coordinates so every constraint reads u_j >= 0
    m = signs * mean
    S = cov * np.outer(signs, signs)
    return _orthant_positive(m, S)


def _orthant_positive(m, S):
    if m.size == 1:
        return float(std_normal_cdf(m[0] / math.sqrt(S[0, 0])))
    s0 = math.sqrt(S[0, 0])
    gain = S[1:, 0] / S[0, 0]
    cond_cov = S[1:, 1:] - np.outer(S[1:, 0], S[0, 1:]) / S[0, 0]

    def integrand(t):
        u0 = m[0] + s0 * t
        rest = m[1:] + gain * (u0 - m[0])
        return float(std_normal_pdf(t)) * _orthant_positive(rest, cond_cov)

    lo = -m[0] / s0
    val, _ = integrate.quad(integrand, lo, max(lo, 0.0) + 12.0,
                            epsabs=1e-10, epsrel=1e-10, limit=200)
    return val
