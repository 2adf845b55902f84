import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dhn.data import GenConfig, generate_synthetic, split
from dhn.errors import UsageError
from dhn.metrics import EvaluationError, acc, evaluate, sweep, zrmse, zrmse_rows
from dhn.model import DhnConfig, train


def zero_inflated(seed, n=40, l=4):
    g = np.random.default_rng(seed)
    y = np.where(g.uniform(size=(n, l)) < 0.5, 0.0, g.exponential(2.0, size=(n, l)))
    return y, g


labels = arrays(np.float64, (6, 3), elements=st.sampled_from([0.0, 0.5, 1.0, 3.0, 7.5]))
preds = arrays(np.float64, (6, 3), elements=st.floats(0, 10, allow_nan=False))


class TestAcc:
    def test_perfect(self):
        y, _ = zero_inflated(0)
        assert acc(y, y)[0] == pytest.approx(1.0, abs=1e-12)

    def test_anti(self):
        y, _ = zero_inflated(1)
        assert acc(y, -y)[0] == pytest.approx(-1.0, abs=1e-12)

    def test_constant_column_excluded(self):
        y = np.array([[1.0, 0.0], [2.0, 1.0], [3.0, 5.0]])
        p = np.array([[1.0, 7.0], [2.5, 7.0], [2.0, 7.0]])
        a, per, excluded = acc(y, p)
        assert excluded == [1]
        assert math.isnan(per[1])
        assert a == pytest.approx(np.corrcoef(y[:, 0], p[:, 0])[0, 1], rel=1e-12)

    def test_all_excluded(self):
        with pytest.raises(EvaluationError):
            acc(np.ones((3, 2)), np.arange(6.0).reshape(3, 2))

    def test_shape_and_rows(self):
        with pytest.raises(UsageError):
            acc(np.ones((3, 2)), np.ones((3, 1)))
        with pytest.raises(UsageError):
            acc(np.ones((1, 2)), np.ones((1, 2)))

    def test_mean_of_per_target(self):
        y, g = zero_inflated(2)
        p = y + g.normal(size=y.shape)
        a, per, _ = acc(y, p)
        ref = [np.corrcoef(y[:, j], p[:, j])[0, 1] for j in range(y.shape[1])]
        np.testing.assert_allclose(per, ref, rtol=1e-12)
        assert a == pytest.approx(np.mean(ref), rel=1e-12)

    def test_affine_invariance(self):
        y, g = zero_inflated(3)
        p = y + g.normal(size=y.shape)
        q = p * g.uniform(0.1, 5, size=y.shape[1]) + g.normal(size=y.shape[1])
        np.testing.assert_allclose(acc(y, p)[1], acc(y, q)[1], atol=1e-10)


class TestZrmse:
    def test_hand_half(self):
        assert zrmse([[0, 2]], [[1, 2]], 0.5) == pytest.approx(math.sqrt(0.5), abs=1e-12)

    def test_hand_alpha_zero(self):
        assert zrmse([[0, 2]], [[1, 2]], 0.0) == 0.0

    def test_hand_mixed(self):
        # row 1: sqrt(0.25*(1+9)/2 + 0.75*4/1); row 2 has no zeros: sqrt(0.75*(1+0+0)/3)
        y = [[0, 0, 3], [1, 2, 5]]
        p = [[1, 3, 1], [2, 2, 5]]
        ref = (math.sqrt(0.25 * 5 + 0.75 * 4) + math.sqrt(0.75 / 3)) / 2
        assert zrmse(y, p, 0.25) == pytest.approx(ref, abs=1e-12)

    def test_all_zero_row(self):
        p = np.array([[0.5, 1.5, 2.0]])
        for a in (0.0, 0.3, 1.0):
            assert zrmse_rows(np.zeros((1, 3)), p, a)[0] == math.sqrt(a * np.mean(p ** 2))

    def test_alpha_range(self):
        with pytest.raises(UsageError):
            zrmse([[1.0]], [[1.0]], 1.5)

    @settings(max_examples=60, deadline=None)
    @given(y=labels, a=st.floats(0, 1))
    def test_exact_is_zero(self, y, a):
        assert zrmse(y, y, a) == 0.0

    @settings(max_examples=60, deadline=None)
    @given(y=labels, p=preds, bump=st.floats(0.1, 5))
    def test_alpha_one_sees_only_zeros(self, y, p, bump):
        q = np.where(y > 0, p + bump, p)
        assert zrmse(y, p, 1.0) == zrmse(y, q, 1.0)

    @settings(max_examples=60, deadline=None)
    @given(y=labels, p=preds, bump=st.floats(0.1, 5))
    def test_alpha_zero_sees_only_positives(self, y, p, bump):
        q = np.where(y == 0, p + bump, p)
        assert zrmse(y, p, 0.0) == zrmse(y, q, 0.0)

    @settings(max_examples=60, deadline=None)
    @given(y=labels, p=preds, a=st.floats(0, 1))
    def test_nonnegative(self, y, p, a):
        assert zrmse(y, p, a) >= 0


class TestSweep:
    def test_monotone_when_only_zeros_are_wrong(self):
        # exact on positives, positive mass on true zeros: zrmse grows with alpha
        y, g = zero_inflated(5)
        p = np.where(y > 0, y, g.uniform(0.2, 1.0, size=y.shape))
        s = sweep(y, p)
        vals = [s[a] for a in sorted(s)]
        assert len(vals) == 5 and vals[0] == 0.0
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_monotone_decreasing_when_only_positives_wrong(self):
        y, g = zero_inflated(6)
        p = np.where(y > 0, y + g.uniform(0.5, 1.0, size=y.shape), 0.0)
        vals = [v for _, v in sorted(sweep(y, p).items())]
        assert all(b < a for a, b in zip(vals, vals[1:]))


@pytest.fixture(scope="module")
def fitted():
    ds, _ = generate_synthetic(GenConfig(400, 4, 3, seed=1, signal=2.0))
    cfg = DhnConfig(M=4, L=3, encoder_dims=(8,), latent_dim=6, head_hidden=6, k_train=8,
                    k_eval=32, epochs=10, lr=0.01, batch_size=64)
    model, _ = train(ds, cfg)
    return model, ds


class TestEvaluate:
    def test_positive_acc_and_repeatable(self, fitted):
        model, ds = fitted
        rows = split(ds, model.config.seed).test
        r1 = evaluate(model, ds, rows, alphas=[0, 0.5, 1])
        r2 = evaluate(model, ds, rows, alphas=[0, 0.5, 1])
        assert r1.acc > 0 and np.isfinite(r1.zrmse) and np.isfinite(r1.nll)
        assert r1.to_text() == r2.to_text()
        assert len(r1.sweep) == 3 and r1.sweep[0.5] == r1.zrmse
        assert r1.n_rows == len(rows)

    def test_report_format(self, fitted):
        model, ds = fitted
        text = evaluate(model, ds).to_text()
        keys = [line.split(" = ")[0] for line in text.splitlines()]
        assert keys[:5] == ["acc", "zrmse", "alpha", "nll", "n_rows"]
        assert "seconds" not in text

    def test_empty_rows(self, fitted):
        model, ds = fitted
        with pytest.raises(UsageError):
            evaluate(model, ds, np.array([], dtype=int))
