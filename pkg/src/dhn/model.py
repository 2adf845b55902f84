"""The deep hurdle network: architecture, objective, training, prediction, persistence."""

import copy
import io
import json
import logging
import time
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import abundance, mvp
from .autodiff import (DenseLayer, Tape, Tensor, absolute, backward, bind, forward_stack,
                       make_optimizer)
from .covariance import CovarianceParam
from .data import Dataset, Standardizer, batches, split as split_dataset
from .errors import (ConfigError, DivergenceError, ModelFileError, NumericalError,
                     TrainingError)
from .probcore import RngStream

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no-encoder", "mlnd-only", "no-cov-penalty")
FORMAT_NAME = "dhn-model"
FORMAT_VERSION = 1
DEFAULT_COV_PENALTY = 1.0


@dataclass
class DhnConfig:
    M: int
    L: int
    kind: str = "continuous"
    encoder_dims: tuple = (512, 256)
    latent_dim: int = 256
    head_hidden: int = 256
    k_train: int = 64
    k_eval: int = 1024
    cov_penalty: float = None
    epochs: int = 100
    batch_size: int = 256
    optimizer: str = "adam"
    lr: float = 1e-3
    decay: float = 0.0
    seed: int = 0
    ablation: str = "full"
    threads: int = 1
    eval_chunk: int = 256

    def __post_init__(self):
        self.encoder_dims = tuple(int(d) for d in self.encoder_dims)
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.kind not in ("continuous", "count"):
            raise ConfigError(f"kind must be continuous or count, got {self.kind!r}")
        if self.M < 1 or self.L < 1:
            raise ConfigError(f"M and L must be positive, got M={self.M}, L={self.L}")
        if self.uses_encoder and not self.encoder_dims:
            raise ConfigError("encoder_dims must be nonempty when the encoder is used")
        if self.cov_penalty is None:
            self.cov_penalty = 0.0 if self.ablation in ("no-cov-penalty", "mlnd-only") \
                else DEFAULT_COV_PENALTY
        self.cov_penalty = float(self.cov_penalty)
        if self.cov_penalty < 0:
            raise ConfigError("cov_penalty must be nonnegative")
        if self.ablation == "no-cov-penalty" and self.cov_penalty != 0:
            raise ConfigError("ablation no-cov-penalty requires cov_penalty = 0")
        if self.ablation in ("full", "no-encoder") and self.cov_penalty == 0:
            raise ConfigError("cov_penalty = 0 is the no-cov-penalty ablation; select it explicitly")
        for name in ("k_train", "k_eval", "epochs", "batch_size", "threads", "eval_chunk"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def uses_encoder(self):
        return self.ablation not in ("no-encoder", "mlnd-only")

    @property
    def uses_mvp(self):
        return self.ablation != "mlnd-only"

    def to_dict(self):
        d = asdict(self)
        d["encoder_dims"] = list(self.encoder_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


class DhnModel:
    """Encoder + probit-mean MLP + abundance-mean MLP + two global covariances."""

    def __init__(self, config, encoder, mvp_mlp, head_mlp, sigma, sigma_head, standardizer=None):
        self.config = config
        self.encoder = encoder
        self.mvp_mlp = mvp_mlp
        self.head_mlp = head_mlp
        self.sigma = sigma
        self.sigma_head = sigma_head
        self.standardizer = standardizer

    @classmethod
    def init(cls, config):
        rng = RngStream(config.seed, (0x1A,))
        encoder = []
        width = config.M
        if config.uses_encoder:
            dims = list(config.encoder_dims) + [config.latent_dim]
            for i, d in enumerate(dims):
                encoder.append(DenseLayer.init(f"encoder.{i}", width, d, rng, "relu"))
                width = d

        def mlp(prefix):
            return [DenseLayer.init(f"{prefix}.0", width, config.head_hidden, rng, "relu"),
                    DenseLayer.init(f"{prefix}.1", config.head_hidden, config.L, rng, "identity")]

        mvp_mlp = mlp("mvp") if config.uses_mvp else []
        head_mlp = mlp("head")
        sigma = CovarianceParam.init("mvp.C", config.L, rng) if config.uses_mvp else None
        if sigma is not None:
            # start with Sigma' == Sigma so the coupling penalty starts at zero
            sigma_head = CovarianceParam("head.C", sigma.param.value.copy())
        else:
            sigma_head = CovarianceParam.init("head.C", config.L, rng)
        return cls(config, encoder, mvp_mlp, head_mlp, sigma, sigma_head)

    @property
    def input_width(self):
        return self.config.M

    @property
    def mlp_input_width(self):
        return self.head_mlp[0].in_dim

    def parameters(self):
        out = []
        for layer in self.encoder + self.mvp_mlp + self.head_mlp:
            out.extend(layer.parameters())
        if self.sigma is not None:
            out.append(self.sigma.param)
        out.append(self.sigma_head.param)
        return out

    def state(self):
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state(self, state):
        for p in self.parameters():
            p.value[...] = state[p.name]

    def forward(self, x, bound=None):
        """(mu, mu_head) for a standardised feature batch; mu is None under mlnd-only."""
        h = forward_stack(self.encoder, x, bound)
        mu = forward_stack(self.mvp_mlp, h, bound) if self.mvp_mlp else None
        return mu, forward_stack(self.head_mlp, h, bound)

    def prepare(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.config.M:
            raise ConfigError(f"expected {self.config.M} features, got {x.shape[1]}")
        return self.standardizer.transform(x) if self.standardizer is not None else x


# objective

def draw_batch_noise(rng, config, batch, k):
    """All Monte-Carlo noise a batch needs, drawn up front in a fixed order."""
    L = config.L
    noise = {"mvp": mvp.draw_noise(rng, batch, k, L) if config.uses_mvp else None}
    noise["head"] = abundance.draw_rate_noise(rng, batch, k, L) if config.kind == "count" else None
    return noise


def _slice_noise(noise, rows):
    out = {"mvp": None if noise["mvp"] is None else noise["mvp"][rows]}
    out["head"] = None if noise["head"] is None else tuple(a[rows] for a in noise["head"])
    return out


def row_nll(model, x, y, noise, bound=None):
    """Per-row negative log-likelihood tensor (B,), before the covariance penalty."""
    cfg = model.config
    mu, mu_head = model.forward(x, bound)
    y = np.asarray(y, dtype=np.float64)
    pos = abundance.positive_mask(y)
    has_pos = pos.sum(axis=1) > 0
    if cfg.uses_mvp:
        C = model.sigma.factor(bound)
        nll = -mvp.mvp_log_likelihood(mu, C, mvp.binary_pattern(y), noise=noise["mvp"])
        head_mask = pos
    else:
        nll = Tensor(np.zeros(len(y)))
        # without the gate, count rows are scored on every target; log-normal needs y > 0
        head_mask = pos if cfg.kind == "continuous" else np.repeat(has_pos[:, None], cfg.L, axis=1) * 1.0
    if cfg.kind == "continuous":
        head = abundance.mlnd_log_density(mu_head, model.sigma_head.sigma(bound), y, head_mask)
    else:
        head = abundance.poisson_lognormal_log_likelihood(
            mu_head, model.sigma_head.factor(bound), y, mask=head_mask, noise=noise["head"])
    # rows with no positives contribute only the probit term
    return nll - head * has_pos.astype(np.float64)


def cov_penalty(model, bound=None):
    """sum_ij |Sigma_ij - Sigma'_ij| as a tensor (0 when there is no probit covariance)."""
    if model.sigma is None:
        return Tensor(0.0)
    return absolute(model.sigma.sigma(bound) - model.sigma_head.sigma(bound)).sum()


def loss(model, x, y, rng=None, k=None, noise=None, bound=None):
    """Batch objective: mean row NLL + cov_penalty * L1(Sigma - Sigma')."""
    cfg = model.config
    if noise is None:
        noise = draw_batch_noise(rng, cfg, len(y), k or cfg.k_train)
    nll = row_nll(model, x, y, noise, bound)
    _check_rows(nll)
    total = nll.mean()
    if cfg.cov_penalty > 0:
        total = total + cfg.cov_penalty * cov_penalty(model, bound)
    return total


def _check_rows(nll, rows=None):
    bad = ~np.isfinite(nll.value)
    if bad.any():
        i = int(np.argmax(bad))
        row = int(rows[i]) if rows is not None else i
        raise DivergenceError(f"non-finite loss at row {row}")


def _chunk_grad(model, x, y, noise, rows):
    tape = Tape()
    bound = bind(model.parameters(), tape)
    nll = row_nll(model, x, y, noise, bound)
    _check_rows(nll, rows)
    return backward(tape, nll.sum()), float(nll.value.sum())


def loss_and_grad(model, x, y, noise, rows=None, threads=1, pool=None):
    """Objective value, its gradient map, and the summed batch NLL.

    With ``threads > 1`` rows are split into contiguous chunks evaluated on
    separate tapes; chunk gradients are reduced in chunk order.
    """
    cfg = model.config
    n = len(y)
    rows = np.arange(n) if rows is None else np.asarray(rows)
    parts = np.array_split(np.arange(n), min(threads, n))
    jobs = [(x[p], y[p], _slice_noise(noise, p), rows[p]) for p in parts]
    if pool is not None and len(jobs) > 1:
        results = list(pool.map(lambda j: _chunk_grad(model, *j), jobs))
    else:
        results = [_chunk_grad(model, *j) for j in jobs]
    grads = {}
    nll_sum = 0.0
    for g, s in results:
        nll_sum += s
        for name, v in g.items():
            grads[name] = grads[name] + v if name in grads else v
    for name in grads:
        grads[name] = grads[name] / n
    total = nll_sum / n
    if cfg.cov_penalty > 0:
        tape = Tape()
        bound = bind(model.parameters(), tape)
        pen = cfg.cov_penalty * cov_penalty(model, bound)
        for name, v in backward(tape, pen).items():
            grads[name] = grads[name] + v
        total += float(pen.value)
    return total, grads, nll_sum


def mean_nll(model, x, y, k, rng, chunk=256):
    """Average per-row NLL with ``k`` samples, evaluated in row chunks without a tape."""
    total = 0.0
    for c, start in enumerate(range(0, len(y), chunk)):
        xs, ys = x[start:start + chunk], y[start:start + chunk]
        noise = draw_batch_noise(rng.child(c), model.config, len(ys), k)
        nll = row_nll(model, xs, ys, noise)
        _check_rows(nll, np.arange(start, start + len(ys)))
        total += float(nll.value.sum())
    return total / len(y)


# training

@dataclass
class TrainReport:
    train_nll: list = field(default_factory=list)
    val_nll: list = field(default_factory=list)
    penalty: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    initial_val_nll: float = float("nan")
    best_epoch: int = -1

    @property
    def epochs(self):
        return len(self.val_nll)

    def to_text(self):
        """Key-value summary plus one line per epoch. Timing is excluded so runs compare equal."""
        lines = [f"epochs = {self.epochs}", f"best_epoch = {self.best_epoch}",
                 f"initial_val_nll = {_num(self.initial_val_nll)}"]
        if self.epochs:
            lines.append(f"best_val_nll = {_num(self.val_nll[self.best_epoch - 1])}")
        lines.append("epoch,train_nll,val_nll,penalty")
        for i in range(self.epochs):
            lines.append(f"{i + 1},{_num(self.train_nll[i])},{_num(self.val_nll[i])},"
                         f"{_num(self.penalty[i])}")
        return "\n".join(lines) + "\n"


def _num(v):
    return format(float(v), ".12g")


def train(dataset, config, split_index=None, callback=None):
    """Fit a model on the training rows of ``dataset``.

    Features are standardised with training statistics (kept on the model).
    Each epoch reshuffles the training rows, steps the optimiser once per
    minibatch and scores the validation rows with ``k_eval`` samples drawn
    from a stream that is identical every epoch. The returned model holds
    the parameters of the epoch with the lowest validation NLL.

    On divergence a :class:`DivergenceError` is raised; its ``model``
    attribute holds the last finite checkpoint and ``report`` the history.
    """
    if dataset.n_features != config.M or dataset.n_targets != config.L:
        raise ConfigError(f"dataset is {dataset.n_features}x{dataset.n_targets}, "
                          f"config expects M={config.M}, L={config.L}")
    if dataset.kind != config.kind:
        raise ConfigError(f"dataset kind {dataset.kind!r} != config kind {config.kind!r}")
    if not np.any(dataset.labels > 0):
        raise ConfigError("dataset has no positive labels; the abundance head cannot be trained")
    sp = split_index if split_index is not None else split_dataset(dataset, config.seed)
    standardizer = Standardizer.fit(dataset.features[sp.train])
    x = standardizer.transform(dataset.features)
    y = dataset.labels

    model = DhnModel.init(config)
    model.standardizer = standardizer
    opt = make_optimizer(config.optimizer, model.parameters(), config.lr, config.decay)
    root = RngStream(config.seed, (0x7A,))
    eval_rng = root.child(2)
    report = TrainReport()
    xv, yv = x[sp.val], y[sp.val]
    has_val = len(sp.val) > 0

    def validate():
        return mean_nll(model, xv, yv, config.k_eval, eval_rng, config.eval_chunk) if has_val \
            else float("nan")

    report.initial_val_nll = validate()
    best = (np.inf, model.state())
    last_good = model.state()
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    step = 0
    try:
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            nll_sum = 0.0
            for b, idx in enumerate(batches(sp.train, config.batch_size, config.seed, epoch)):
                noise = draw_batch_noise(root.child(1, epoch, b), config, len(idx), config.k_train)
                step += 1
                try:
                    _, grads, s = loss_and_grad(model, x[idx], y[idx], noise, rows=idx,
                                                threads=config.threads, pool=pool)
                    opt.step(grads)
                except TrainingError:
                    raise
                except NumericalError as exc:
                    raise TrainingError(f"epoch {epoch}, step {step}: {exc}", step=step) from exc
                nll_sum += s
            report.train_nll.append(nll_sum / len(sp.train))
            report.penalty.append(float(cov_penalty(model).value))
            try:
                v = validate()
            except NumericalError as exc:
                raise TrainingError(f"validation after epoch {epoch}: {exc}", step=step) from exc
            report.val_nll.append(v)
            report.seconds.append(time.perf_counter() - t0)
            last_good = model.state()
            if not v >= best[0]:
                best = (v, last_good)
                report.best_epoch = epoch
            log.info("epoch %d: train NLL %.5f, val NLL %.5f, penalty %.5f",
                     epoch, report.train_nll[-1], v, report.penalty[-1])
            if callback is not None:
                callback(epoch, report)
    except DivergenceError as exc:
        model.load_state(last_good)
        exc.model = model
        exc.report = report
        raise
    finally:
        if pool is not None:
            pool.shutdown()
    if report.best_epoch > 0:
        model.load_state(best[1])
    return model, report


# prediction

def predict(model, x):
    """Hurdle-gated conditional means.

    Returns ``(yhat, p)`` where p_j = Phi(mu_j / sqrt(Sigma_jj)) and
    yhat_j = p_j * exp(mu'_j + Sigma'_jj / 2). Under mlnd-only p is all ones.
    ``x`` is raw (unstandardised) features, one row or a (N, M) matrix.
    """
    single = np.ndim(x) == 1
    xs = model.prepare(x)
    mu, mu_head = model.forward(xs)
    if mu is None:
        p = np.ones_like(mu_head.value)
    else:
        p = mvp.positive_probabilities(mu.value, model.sigma.sigma_value())
    var = np.diag(model.sigma_head.sigma_value())
    yhat = p * np.exp(mu_head.value + 0.5 * var)
    return (yhat[0], p[0]) if single else (yhat, p)


# persistence

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _zip_write(zf, name, data):
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _npy_bytes(a):
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(a, dtype="<f8"), allow_pickle=False)
    return buf.getvalue()


def save_model(model, path):
    """Write a zip container: ``meta.json`` plus one little-endian float64 .npy per array."""
    arrays = {p.name: p.value for p in model.parameters()}
    if model.standardizer is not None:
        arrays["standardizer.mean"] = model.standardizer.mean
        arrays["standardizer.scale"] = model.standardizer.scale
    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "arrays": {k: list(np.shape(v)) for k, v in sorted(arrays.items())},
    }
    with zipfile.ZipFile(path, "w") as zf:
        _zip_write(zf, "meta.json", json.dumps(meta, indent=2, sort_keys=True))
        for name in sorted(arrays):
            _zip_write(zf, f"arrays/{name}.npy", _npy_bytes(arrays[name]))


def load_model(path, expect_m=None, expect_l=None):
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            if meta.get("format") != FORMAT_NAME:
                raise ModelFileError(f"{path}: not a model file")
            if meta.get("version") != FORMAT_VERSION:
                raise ModelFileError(
                    f"{path}: format version {meta.get('version')} unsupported "
                    f"(expected {FORMAT_VERSION})")
            arrays = {name: np.load(io.BytesIO(zf.read(f"arrays/{name}.npy")),
                                    allow_pickle=False)
                      for name in meta["arrays"]}
    except ModelFileError:
        raise
    except FileNotFoundError:
        raise ModelFileError(f"model file not found: {path}") from None
    except (zipfile.BadZipFile, KeyError, ValueError, EOFError, OSError) as exc:
        raise ModelFileError(f"{path}: unreadable or truncated model file ({exc})") from None
    config = DhnConfig.from_dict(meta["config"])
    if expect_m is not None and expect_m != config.M:
        raise ModelFileError(f"{path}: model has M={config.M} features, data has {expect_m}")
    if expect_l is not None and expect_l != config.L:
        raise ModelFileError(f"{path}: model has L={config.L} targets, data has {expect_l}")
    model = DhnModel.init(config)
    for p in model.parameters():
        if p.name not in arrays:
            raise ModelFileError(f"{path}: missing array {p.name}")
        if arrays[p.name].shape != p.value.shape:
            raise ModelFileError(
                f"{path}: array {p.name} has shape {arrays[p.name].shape}, expected {p.value.shape}")
        p.value[...] = arrays[p.name]
    if "standardizer.mean" in arrays:
        model.standardizer = Standardizer(arrays["standardizer.mean"], arrays["standardizer.scale"])
    return model


def clone(model):
    return copy.deepcopy(model)


__all__ = ["DhnConfig", "DhnModel", "TrainReport", "loss", "loss_and_grad", "row_nll",
           "cov_penalty", "mean_nll", "train", "predict", "save_model", "load_model",
           "Dataset", "ABLATIONS"]
