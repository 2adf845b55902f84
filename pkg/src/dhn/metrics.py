"""Evaluation metrics: average correlation coefficient and zero-inflated RMSE."""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DhnError, UsageError
from .model import mean_nll, predict
from .probcore import RngStream

DEFAULT_ALPHA = 0.5
ALPHA_SWEEP = (0.0, 0.25, 0.5, 0.75, 1.0)


class EvaluationError(DhnError):
    exit_code = 2


def _pair(actual, predicted):
    a = np.atleast_2d(np.asarray(actual, dtype=np.float64))
    p = np.atleast_2d(np.asarray(predicted, dtype=np.float64))
    if a.shape != p.shape:
        raise UsageError(f"actual {a.shape} and predicted {p.shape} differ in shape")
    return a, p


def acc(actual, predicted):
    """Mean per-target Pearson correlation.

    Targets where either column is constant have no defined correlation;
    they are left out of the mean and returned in ``excluded``.
    Returns ``(acc, per_target, excluded)`` with NaN at excluded positions.
    """
    a, p = _pair(actual, predicted)
    if a.shape[0] < 2:
        raise UsageError("acc needs at least two rows")
    da = a - a.mean(axis=0)
    dp = p - p.mean(axis=0)
    ssa = (da * da).sum(axis=0)
    ssp = (dp * dp).sum(axis=0)
    ok = (ssa > 0) & (ssp > 0)
    per = np.full(a.shape[1], np.nan)
    per[ok] = (da[:, ok] * dp[:, ok]).sum(axis=0) / np.sqrt(ssa[ok] * ssp[ok])
    excluded = [int(j) for j in np.flatnonzero(~ok)]
    if not ok.any():
        raise EvaluationError("every target has zero variance; ACC is undefined")
    return float(per[ok].mean()), per, excluded


def zrmse_rows(actual, predicted, alpha=DEFAULT_ALPHA):
    a, p = _pair(actual, predicted)
    if not 0.0 <= alpha <= 1.0:
        raise UsageError(f"alpha must lie in [0, 1], got {alpha}")
    zero = a <= 0
    pos = ~zero
    n0 = zero.sum(axis=1)
    n1 = pos.sum(axis=1)
    s0 = np.where(zero, p * p, 0.0).sum(axis=1)
    s1 = np.where(pos, (a - p) ** 2, 0.0).sum(axis=1)
    # an empty index set contributes 0
    t0 = np.divide(s0, n0, out=np.zeros_like(s0), where=n0 > 0)
    t1 = np.divide(s1, n1, out=np.zeros_like(s1), where=n1 > 0)
    return np.sqrt(alpha * t0 + (1.0 - alpha) * t1)


def zrmse(actual, predicted, alpha=DEFAULT_ALPHA):
    """Mean over rows of sqrt(alpha * mean_{y=0} yhat^2 + (1-alpha) * mean_{y>0} (y-yhat)^2)."""
    return float(zrmse_rows(actual, predicted, alpha).mean())


@dataclass
class EvalReport:
    acc: float
    zrmse: float
    alpha: float
    per_target: list
    excluded: list
    n_rows: int
    nll: float = float("nan")
    seconds: float = 0.0
    sweep: dict = field(default_factory=dict)

    def to_text(self):
        """``key = value`` lines; reals use the ``.12g`` format. Timing is not written."""
        lines = [
            f"acc = {_num(self.acc)}",
            f"zrmse = {_num(self.zrmse)}",
            f"alpha = {_num(self.alpha)}",
            f"nll = {_num(self.nll)}",
            f"n_rows = {self.n_rows}",
            "per_target_corr = " + ",".join(_num(v) for v in self.per_target),
            "excluded_targets = " + ",".join(str(j) for j in self.excluded),
        ]
        for a, v in sorted(self.sweep.items()):
            lines.append(f"zrmse[alpha={_num(a)}] = {_num(v)}")
        return "\n".join(lines) + "\n"


def _num(v):
    return format(float(v), ".12g")


def sweep(actual, predicted, alphas=ALPHA_SWEEP):
    return {float(a): zrmse(actual, predicted, a) for a in alphas}


def evaluate(model, dataset, rows=None, alpha=DEFAULT_ALPHA, k_eval=None, alphas=None, seed=None):
    """Score ``model`` on ``dataset`` rows (default: all rows).

    The test NLL uses ``k_eval`` samples from a stream fixed by ``seed``
    (default: the model's seed), so repeated calls agree exactly.
    """
    t0 = time.perf_counter()
    idx = np.arange(dataset.n_rows) if rows is None else np.asarray(rows)
    if len(idx) == 0:
        raise UsageError("nothing to evaluate: empty row set")
    x, y = dataset.features[idx], dataset.labels[idx]
    yhat, _ = predict(model, x)
    a, per, excluded = acc(y, yhat)
    cfg = model.config
    k = k_eval or cfg.k_eval
    rng = RngStream(cfg.seed if seed is None else seed, (0xE7,))
    nll = mean_nll(model, model.prepare(x), y, k, rng, cfg.eval_chunk)
    report = EvalReport(
        acc=a, zrmse=zrmse(y, yhat, alpha), alpha=float(alpha),
        per_target=[float(v) for v in per], excluded=excluded, n_rows=len(idx), nll=nll,
        sweep=sweep(y, yhat, alphas) if alphas else {})
    report.seconds = time.perf_counter() - t0
    return report
