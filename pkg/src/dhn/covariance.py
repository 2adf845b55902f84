"""Covariance parameterisation Sigma = I + C C^T with a floored lower-triangular C."""

import numpy as np

from .autodiff import Parameter, Tensor, softplus
from .errors import ConfigError

DIAG_FLOOR = 1e-4


def softplus_inverse(y):
    return np.log(np.expm1(y))


class CovarianceParam:
    """Free lower-triangular factor C of an L x L covariance.

    ``raw`` is stored as a full L x L array; entries above the diagonal are
    ignored, diagonal entries pass through ``softplus(.) + 1e-4``. Any
    principal submatrix of the implied Sigma is therefore positive definite
    and ``Sigma - I`` is PSD without projection steps.
    """

    def __init__(self, name, raw):
        raw = np.array(raw, dtype=np.float64)
        if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
            raise ConfigError(f"{name}: raw factor must be square, got {raw.shape}")
        self.param = Parameter(name, raw)
        n = raw.shape[0]
        self._strict = np.tril(np.ones((n, n)), -1)
        self._eye = np.eye(n)

    @classmethod
    def init(cls, name, dim, rng, diag=0.05, offdiag_scale=0.01):
        raw = np.tril(offdiag_scale * rng.normal((dim, dim)), -1)
        raw[np.diag_indices(dim)] = softplus_inverse(diag)
        return cls(name, raw)

    @classmethod
    def from_factor(cls, name, C):
        """Invert the diagonal map so that ``factor_value()`` returns ``C``."""
        C = np.array(C, dtype=np.float64)
        d = np.diag(C) - DIAG_FLOOR
        if np.any(d <= 0):
            raise ConfigError(f"{name}: factor diagonal must exceed {DIAG_FLOOR}")
        raw = np.tril(C, -1)
        raw[np.diag_indices(len(C))] = softplus_inverse(d)
        return cls(name, raw)

    @property
    def name(self):
        return self.param.name

    @property
    def dim(self):
        return self.param.value.shape[0]

    def factor(self, bound=None):
        """C as a tensor; ``bound`` maps parameter names to watched leaves."""
        raw = bound[self.name] if bound is not None else Tensor(self.param.value)
        return raw * self._strict + (softplus(raw) + DIAG_FLOOR) * self._eye

    def factor_value(self):
        raw = self.param.value
        return raw * self._strict + (np.logaddexp(0.0, raw) + DIAG_FLOOR) * self._eye

    def sigma(self, bound=None):
        C = self.factor(bound)
        return C @ C.T + self._eye

    def sigma_value(self):
        C = self.factor_value()
        return np.eye(self.dim) + C @ C.T


def sigma_from_factor(param):
    """Return (Sigma, C) as arrays for a :class:`CovarianceParam`."""
    C = param.factor_value()
    return np.eye(param.dim) + C @ C.T, C
