"""Define-by-run reverse-mode differentiation over float64 numpy arrays.

A :class:`Tensor` wraps an ndarray (0-d for scalars) and, when it depends on
a watched parameter, a node id on the :class:`Tape` that produced it.
Nodes are appended as operations execute, so the node list is already in
topological order and the backward sweep is a single reverse pass.
"""

import numpy as np

from ..errors import UsageError
from .. import probcore

__all__ = [
    "Tape", "Tensor", "backward", "constant",
    "exp", "log", "softplus", "relu", "absolute", "sqrt", "ndtr", "log_ndtr",
    "log_mean_exp", "logsumexp", "gaussian_logpdf_masked",
]


class _Node:
    __slots__ = ("op", "parents", "vjp")

    def __init__(self, op, parents, vjp):
        self.op = op
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Append-only record of one forward pass.

    Tapes are not thread-safe; give each worker its own.
    """

    def __init__(self):
        self.nodes = []
        self.params = {}  # node id -> Parameter

    def __len__(self):
        return len(self.nodes)

    def watch(self, param):
        """Return a leaf tensor bound to ``param`` (anything with ``.name`` and ``.value``)."""
        nid = len(self.nodes)
        self.nodes.append(_Node("leaf", (), None))
        self.params[nid] = param
        return Tensor(param.value, nid, self)

    def record(self, op, value, parents, vjp):
        ids = tuple(p.node for p in parents)
        nid = len(self.nodes)
        self.nodes.append(_Node(op, ids, vjp))
        return Tensor(value, nid, self)


class Tensor:
    __slots__ = ("value", "node", "tape")
    __array_ufunc__ = None  # make ndarray defer to our reflected operators

    def __init__(self, value, node=None, tape=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.node = node
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        tag = "const" if self.node is None else f"node={self.node}"
        return f"Tensor({self.value!r}, {tag})"

    def item(self):
        return float(np.asarray(self.value).reshape(-1)[0]) if np.size(self.value) == 1 else float(self.value)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        n = self.value.size if axis is None else self.value.shape[axis]
        return tsum(self, axis) * (1.0 / n)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def constant(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op, value, parents, vjp):
    """Record on the shared tape of the tracked parents, or return a constant."""
    tape = None
    tracked = []
    for p in parents:
        if p.node is not None:
            if tape is None:
                tape = p.tape
            elif p.tape is not tape:
                raise UsageError("operands belong to different tapes")
            tracked.append(p)
    if tape is None:
        return Tensor(value)

    def masked_vjp(g, _vjp=vjp, _flags=[p.node is not None for p in parents]):
        grads = _vjp(g)
        return tuple(gr for gr, f in zip(grads, _flags) if f)

    return tape.record(op, value, tracked, masked_vjp)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def add(a, b):
    a, b = constant(a), constant(b)
    sa, sb = a.shape, b.shape
    return _make("add", a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = constant(a), constant(b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = constant(a), constant(b)
    av, bv = a.value, b.value
    return _make("mul", av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b):
    a, b = constant(a), constant(b)
    av, bv = a.value, b.value
    out = av / bv
    return _make("div", out, (a, b),
                 lambda g: (_unbroadcast(g / bv, av.shape),
                            _unbroadcast(-g * out / bv, bv.shape)))


def matmul(a, b):
    """Matrix product with numpy's stacking rules; 1-d operands are not supported."""
    a, b = constant(a), constant(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise UsageError("matmul operands must be at least 2-d")

    def vjp(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _make("matmul", av @ bv, (a, b), vjp)


def transpose(a):
    return _make("transpose", np.swapaxes(a.value, -1, -2), (a,),
                 lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape):
    a = constant(a)
    old = a.shape
    return _make("reshape", a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a, index):
    a = constant(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make("getitem", a.value[index], (a,), vjp)


def tsum(a, axis=None):
    a = constant(a)
    shape = a.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", a.value.sum(axis=axis), (a,), vjp)


def exp(a):
    a = constant(a)
    out = np.exp(a.value)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a):
    a = constant(a)
    av = a.value
    return _make("log", np.log(av), (a,), lambda g: (g / av,))


def sqrt(a):
    a = constant(a)
    out = np.sqrt(a.value)
    return _make("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def softplus(a):
    a = constant(a)
    av = a.value
    return _make("softplus", np.logaddexp(0.0, av), (a,),
                 lambda g: (g * probcore.sigmoid(av),))


def relu(a):
    a = constant(a)
    av = a.value
    # subgradient at exactly 0 is 0
    return _make("relu", np.maximum(av, 0.0), (a,), lambda g: (g * (av > 0.0),))


def absolute(a):
    a = constant(a)
    av = a.value
    return _make("abs", np.abs(av), (a,), lambda g: (g * np.sign(av),))


def ndtr(a):
    a = constant(a)
    av = a.value
    return _make("ndtr", probcore.std_normal_cdf(av), (a,),
                 lambda g: (g * probcore.std_normal_pdf(av),))


def log_ndtr(a):
    """log Phi, with the derivative phi/Phi formed in the log domain."""
    a = constant(a)
    av = a.value
    out = probcore.log_std_normal_cdf(av)

    def vjp(g):
        return (g * np.exp(probcore.log_std_normal_pdf(av) - out),)

    return _make("log_ndtr", out, (a,), vjp)


def logsumexp(a, axis=-1):
    a = constant(a)
    av = a.value
    out = probcore.logsumexp(av, axis=axis)

    def vjp(g):
        w = np.exp(av - np.expand_dims(out, axis))
        return (np.expand_dims(g, axis) * w,)

    return _make("logsumexp", out, (a,), vjp)


def log_mean_exp(a, axis=-1):
    """log((1/k) sum exp(a)) along ``axis``."""
    k = constant(a).shape[axis]
    return logsumexp(a, axis=axis) - np.log(k)


def gaussian_logpdf_masked(resid, cov, mask):
    """Row-wise Gaussian log density restricted to a per-row coordinate subset.

    ``resid`` is (B, L), ``cov`` is (L, L) and ``mask`` is a constant (B, L)
    0/1 array. Row ``b`` is scored under N(0, cov[S, S]) with S the set of
    masked-in coordinates; masked-out residuals are ignored. Each row's
    subset matrix is embedded as ``cov * m m^T + diag(1 - m)``, which has the
    same determinant and quadratic form as the principal submatrix.
    """
    resid, cov = constant(resid), constant(cov)
    m = np.asarray(mask, dtype=np.float64)
    r = resid.value * m
    S = cov.value
    outer = m[:, :, None] * m[:, None, :]
    emb = S[None, :, :] * outer
    idx = np.arange(S.shape[0])
    emb[:, idx, idx] += 1.0 - m
    chol = probcore.batched_cholesky(emb)
    z = np.linalg.solve(chol, r[:, :, None])[:, :, 0]
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(axis=-1)
    p = m.sum(axis=1)
    out = -0.5 * (p * np.log(2.0 * np.pi) + logdet + (z * z).sum(axis=1))

    def vjp(g):
        linv = np.linalg.solve(chol, np.broadcast_to(np.eye(S.shape[0]), chol.shape))
        prec = np.swapaxes(linv, -1, -2) @ linv
        alpha = (prec @ r[:, :, None])[:, :, 0] * m
        g_resid = -g[:, None] * alpha
        g_cov = (-0.5 * g[:, None, None]
                 * (prec - alpha[:, :, None] * alpha[:, None, :]) * outer).sum(axis=0)
        return g_resid, g_cov

    return _make("gaussian_logpdf_masked", out, (resid, cov), vjp)


def backward(tape, loss):
    """Gradients of a scalar ``loss`` w.r.t. every parameter watched on ``tape``.

    Returns a dict keyed by parameter name. Watched parameters the loss does
    not depend on get exact zeros. The tape is left untouched, so repeated
    calls give identical results.
    """
    if not isinstance(loss, Tensor) or loss.tape is not tape or loss.node is None:
        raise UsageError("loss is not a node on this tape")
    if loss.value.size != 1:
        raise UsageError(f"loss must be scalar, got shape {loss.shape}")
    grads = [None] * (loss.node + 1)
    grads[loss.node] = np.ones_like(loss.value)
    for nid in range(loss.node, -1, -1):
        g = grads[nid]
        node = tape.nodes[nid]
        if g is None or node.vjp is None:
            continue
        for pid, pg in zip(node.parents, node.vjp(g)):
            grads[pid] = pg if grads[pid] is None else grads[pid] + pg
    out = {}
    for nid, param in tape.params.items():
        g = grads[nid] if nid < len(grads) else None
        g = np.zeros_like(param.value) if g is None else np.asarray(g, dtype=np.float64)
        name = param.name
        out[name] = out[name] + g if name in out else g
    return out
