"""Datasets: CSV ingestion, splitting, minibatching, standardisation, synthetic data."""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .covariance import DIAG_FLOOR
from .errors import DataError, UsageError
from .probcore import RngStream

log = logging.getLogger(__name__)

KINDS = ("continuous", "count")
SPLIT_FRACTIONS = (0.70, 0.15, 0.15)


@dataclass(frozen=True)
class Schema:
    features: tuple
    targets: tuple
    kind: str = "continuous"

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.kind not in KINDS:
            raise DataError(f"schema kind must be one of {KINDS}, got {self.kind!r}")
        if not self.features or not self.targets:
            raise DataError("schema needs at least one feature and one target column")
        overlap = set(self.features) & set(self.targets)
        if overlap:
            raise DataError(f"columns listed as both feature and target: {sorted(overlap)}")

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"schema file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"schema file {path} is not valid JSON: {exc}") from None
        try:
            return cls(raw["features"], raw["targets"], raw.get("kind", "continuous"))
        except (KeyError, TypeError) as exc:
            raise DataError(f"schema file {path} lacks field {exc}") from None

    def dump(self, path):
        doc = {"features": list(self.features), "targets": list(self.targets), "kind": self.kind}
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    kind: str = "continuous"
    feature_names: list = None
    target_names: list = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.features.ndim != 2 or self.labels.ndim != 2:
            raise DataError("features and labels must be 2-d")
        if len(self.features) != len(self.labels):
            raise DataError(
                f"{len(self.features)} feature rows but {len(self.labels)} label rows")
        if self.kind not in KINDS:
            raise DataError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.feature_names is None:
            self.feature_names = [f"x{j + 1}" for j in range(self.n_features)]
        if self.target_names is None:
            self.target_names = [f"y{j + 1}" for j in range(self.n_targets)]
        _check_finite(self.features, "feature", self.feature_names)
        _check_labels(self.labels, self.kind, self.target_names)

    @property
    def n_rows(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def n_targets(self):
        return self.labels.shape[1]

    @property
    def nonzero_fraction(self):
        return float(np.mean(self.labels > 0)) if self.labels.size else 0.0

    def subset(self, idx):
        return Dataset(self.features[idx], self.labels[idx], self.kind,
                       list(self.feature_names), list(self.target_names))

    @property
    def schema(self):
        return Schema(self.feature_names, self.target_names, self.kind)


def _check_finite(a, what, names):
    bad = ~np.isfinite(a)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError(f"non-finite {what} value at row {r}, column {names[c]!r}")


def _check_labels(y, kind, names):
    _check_finite(y, "label", names)
    neg = y < 0
    if neg.any():
        r, c = np.argwhere(neg)[0]
        raise DataError(f"negative label {float(y[r, c])!r} at row {r}, column {names[c]!r}")
    if kind == "count":
        frac = y != np.round(y)
        if frac.any():
            r, c = np.argwhere(frac)[0]
            raise DataError(f"fractional count {float(y[r, c])!r} at row {r}, column {names[c]!r}")


def _parse_cell(text, line, column, path):
    try:
        v = float(text)
    except ValueError:
        raise DataError(
            f"{path}: non-numeric cell {text!r} at line {line}, column {column!r}") from None
    if not math.isfinite(v):
        raise DataError(f"{path}: non-finite cell {text!r} at line {line}, column {column!r}")
    return v


def read_columns(path, columns):
    """Read the named columns of a headered CSV as a float matrix.

    Line numbers in errors count the header as line 1. An empty file or a
    header-only file yields zero rows.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"data file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return np.zeros((0, len(columns)))
        header = [h.strip() for h in header]
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")
        pos = [header.index(c) for c in columns]
        rows = []
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not cell.strip() for cell in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: line {line} has {len(rec)} fields, expected {len(header)}")
            rows.append([_parse_cell(rec[p].strip(), line, c, path) for p, c in zip(pos, columns)])
    return np.array(rows, dtype=np.float64).reshape(-1, len(columns))


def load_csv(path, schema):
    """Parse and validate a dataset described by ``schema`` (a Schema or a schema path)."""
    if not isinstance(schema, Schema):
        schema = Schema.load(schema)
    cols = list(schema.features) + list(schema.targets)
    table = read_columns(path, cols)
    m = len(schema.features)
    x, y = table[:, :m], table[:, m:]
    # relocate label errors to file coordinates (header is line 1)
    for r, c in np.argwhere(y < 0)[:1]:
        raise DataError(
            f"{path}: negative label {float(y[r, c])!r} at line {r + 2}, column {schema.targets[c]!r}")
    if schema.kind == "count":
        for r, c in np.argwhere(y != np.round(y))[:1]:
            raise DataError(
                f"{path}: fractional count {float(y[r, c])!r} at line {r + 2}, column {schema.targets[c]!r}")
    ds = Dataset(x, y, schema.kind, list(schema.features), list(schema.targets))
    log.info("loaded %s: N=%d, M=%d, L=%d, nonzero fraction %.4f",
             path, ds.n_rows, ds.n_features, ds.n_targets, ds.nonzero_fraction)
    return ds


def _fmt(v, integral):
    return str(int(v)) if integral else repr(float(v))


def write_csv(dataset, path):
    integral = dataset.kind == "count"
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(dataset.feature_names) + list(dataset.target_names))
        for xrow, yrow in zip(dataset.features, dataset.labels):
            w.writerow([repr(float(v)) for v in xrow] + [_fmt(v, integral) for v in yrow])


@dataclass(frozen=True)
class SplitIndex:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int

    def sizes(self):
        return len(self.train), len(self.val), len(self.test)


def split(dataset, seed):
    """Seeded 70/15/15 partition; validation and test get floor(0.15 N) rows each."""
    n = dataset if isinstance(dataset, int) else dataset.n_rows
    if n < 10:
        raise UsageError(f"need at least 10 rows to split, got {n}")
    perm = RngStream(seed, (0xD1,)).permutation(n)
    n_val = int(math.floor(SPLIT_FRACTIONS[1] * n))
    n_test = int(math.floor(SPLIT_FRACTIONS[2] * n))
    n_train = n - n_val - n_test
    return SplitIndex(np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
                      np.sort(perm[n_train + n_val:]), int(seed))


def batches(indices, batch_size, seed, epoch):
    """Shuffle ``indices`` for this (seed, epoch) and cut into minibatches."""
    if batch_size < 1:
        raise UsageError("batch size must be >= 1")
    idx = np.asarray(indices)
    order = idx[RngStream(seed, (0xBA, epoch)).permutation(len(idx))]
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x):
        x = np.asarray(x, dtype=np.float64)
        mean = x.mean(axis=0)
        sd = x.std(axis=0)
        return cls(mean, np.where(sd > 0, sd, 1.0))

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale


def standardize(dataset, split_index):
    """Scale features with statistics from the training rows only."""
    st = Standardizer.fit(dataset.features[split_index.train])
    out = Dataset(st.transform(dataset.features), dataset.labels.copy(), dataset.kind,
                  list(dataset.feature_names), list(dataset.target_names))
    return out, st


@dataclass
class GenConfig:
    n: int
    m: int
    l: int
    kind: str = "continuous"
    seed: int = 0
    corr: float = 1.0            # loading of the shared factor in C and C'
    signal: float = 1.0          # scale of the linear presence map
    head_signal: float = None    # scale of the linear log-mean map (default: signal)
    presence_offset: float = -0.3
    log_mean_offset: float = 0.5
    A_mu: np.ndarray = None
    A_head: np.ndarray = None
    C: np.ndarray = None
    C_head: np.ndarray = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.l < 1:
            raise UsageError(f"n, m, l must be positive, got {self.n}, {self.m}, {self.l}")
        if self.kind not in KINDS:
            raise UsageError(f"kind must be one of {KINDS}")


def shared_factor(l, corr, idio=0.3):
    """Lower-triangular C whose first column is ``corr``: every pair covaries by corr^2."""
    C = np.zeros((l, l))
    C[:, 0] = corr
    C[np.arange(1, l), np.arange(1, l)] = idio
    if corr <= DIAG_FLOOR:
        C[0, 0] = idio
    return C


def _truncated_poisson(rng, lam):
    # inverse-CDF draw from Poisson(lam) conditioned on >= 1
    p0 = np.exp(-lam)
    u = p0 + (1.0 - p0) * rng.uniform(size=lam.shape)
    y = stats.poisson.ppf(np.minimum(u, np.nextafter(1.0, 0.0)), lam)
    return np.maximum(y, 1.0)


def generate_synthetic(cfg):
    """Sample a dataset from the hurdle generative process with linear mean maps.

    Returns ``(dataset, truth)``; ``truth`` holds the ground-truth arrays
    as nested lists (JSON-ready).
    """
    root = RngStream(cfg.seed, (0x5E,))
    g = root.child(0)
    A_mu = cfg.A_mu if cfg.A_mu is not None else cfg.signal * g.normal((cfg.l, cfg.m)) / np.sqrt(cfg.m)
    head_signal = cfg.signal if cfg.head_signal is None else cfg.head_signal
    A_head = (cfg.A_head if cfg.A_head is not None
              else head_signal * g.normal((cfg.l, cfg.m)) / np.sqrt(cfg.m))
    C = cfg.C if cfg.C is not None else shared_factor(cfg.l, cfg.corr)
    C_head = cfg.C_head if cfg.C_head is not None else C
    A_mu, A_head, C, C_head = (np.asarray(a, dtype=np.float64) for a in (A_mu, A_head, C, C_head))
    b_mu = np.full(cfg.l, cfg.presence_offset)
    b_head = np.full(cfg.l, cfg.log_mean_offset)
    sigma = np.eye(cfg.l) + C @ C.T
    sigma_head = np.eye(cfg.l) + C_head @ C_head.T

    d = root.child(1)
    x = d.normal((cfg.n, cfg.m))
    mu = x @ A_mu.T + b_mu
    mu_head = x @ A_head.T + b_head
    r = mu + d.normal((cfg.n, cfg.l)) @ np.linalg.cholesky(sigma).T
    present = r > 0
    s = mu_head + d.normal((cfg.n, cfg.l)) @ np.linalg.cholesky(sigma_head).T
    y = np.zeros((cfg.n, cfg.l))
    if cfg.kind == "continuous":
        y[present] = np.exp(s[present])
    else:
        y[present] = _truncated_poisson(d, np.exp(s[present]))
    truth = {
        "kind": cfg.kind, "seed": cfg.seed, "n": cfg.n, "m": cfg.m, "l": cfg.l,
        "A_mu": A_mu.tolist(), "b_mu": b_mu.tolist(),
        "A_head": A_head.tolist(), "b_head": b_head.tolist(),
        "C": C.tolist(), "C_head": C_head.tolist(),
        "sigma": sigma.tolist(), "sigma_head": sigma_head.tolist(),
    }
    return Dataset(x, y, cfg.kind), truth
