import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dhn.data import (Dataset, GenConfig, Schema, Standardizer, batches, generate_synthetic,
                      load_csv, read_columns, split, standardize, write_csv)
from dhn.errors import DataError, UsageError


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


@pytest.fixture
def schema():
    return Schema(("a", "b"), ("y1", "y2"), "count")


class TestLoader:
    def test_reads_named_columns(self, tmp_path, schema):
        p = write(tmp_path, "y2,a,extra,b,y1\n1,0.5,z,2,0\n0,-1,q,3,4\n")
        ds = load_csv(p, schema)
        np.testing.assert_array_equal(ds.features, [[0.5, 2], [-1, 3]])
        np.testing.assert_array_equal(ds.labels, [[0, 1], [4, 0]])
        assert ds.nonzero_fraction == 0.5

    def test_negative_label_located(self, tmp_path, schema):
        p = write(tmp_path, "a,b,y1,y2\n1,2,0,1\n1,2,-3,1\n")
        with pytest.raises(DataError, match=r"line 3, column 'y1'"):
            load_csv(p, schema)

    def test_fractional_count_located(self, tmp_path, schema):
        p = write(tmp_path, "a,b,y1,y2\n1,2,0,1.5\n")
        with pytest.raises(DataError, match=r"fractional count 1.5 at line 2, column 'y2'"):
            load_csv(p, schema)

    def test_fractional_ok_when_continuous(self, tmp_path):
        p = write(tmp_path, "a,b,y1,y2\n1,2,0,1.5\n")
        ds = load_csv(p, Schema(("a", "b"), ("y1", "y2")))
        assert ds.labels[0, 1] == 1.5

    @pytest.mark.parametrize("cell", ["nan", "NaN", "inf", "-inf"])
    def test_non_finite_located(self, tmp_path, schema, cell):
        p = write(tmp_path, f"a,b,y1,y2\n1,2,0,1\n1,{cell},0,1\n")
        with pytest.raises(DataError, match=r"line 3, column 'b'"):
            load_csv(p, schema)

    def test_non_numeric(self, tmp_path, schema):
        p = write(tmp_path, "a,b,y1,y2\n1,two,0,1\n")
        with pytest.raises(DataError, match="non-numeric"):
            load_csv(p, schema)

    def test_missing_column(self, tmp_path, schema):
        p = write(tmp_path, "a,y1,y2\n1,0,1\n")
        with pytest.raises(DataError, match=r"\['b'\]"):
            load_csv(p, schema)

    def test_ragged_row(self, tmp_path, schema):
        p = write(tmp_path, "a,b,y1,y2\n1,2,0\n")
        with pytest.raises(DataError, match="line 2 has 3 fields"):
            load_csv(p, schema)

    def test_missing_file(self, tmp_path, schema):
        with pytest.raises(DataError, match="not found"):
            load_csv(tmp_path / "none.csv", schema)

    def test_header_only_and_empty(self, tmp_path):
        assert read_columns(write(tmp_path, "a,b\n"), ["a", "b"]).shape == (0, 2)
        assert read_columns(write(tmp_path, "", "e.csv"), ["a"]).shape == (0, 1)

    def test_round_trip(self, tmp_path):
        ds, _ = generate_synthetic(GenConfig(30, 3, 2, kind="continuous", seed=4))
        p = tmp_path / "r.csv"
        write_csv(ds, p)
        back = load_csv(p, ds.schema)
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.labels, ds.labels)


class TestSchema:
    def test_round_trip(self, tmp_path, schema):
        schema.dump(tmp_path / "s.schema")
        assert Schema.load(tmp_path / "s.schema") == schema

    def test_bad_json(self, tmp_path):
        with pytest.raises(DataError, match="not valid JSON"):
            Schema.load(write(tmp_path, "{", "s.schema"))

    def test_missing_field(self, tmp_path):
        with pytest.raises(DataError, match="targets"):
            Schema.load(write(tmp_path, json.dumps({"features": ["a"]}), "s.schema"))

    def test_overlap(self):
        with pytest.raises(DataError):
            Schema(("a",), ("a",))


class TestDataset:
    def test_rejects_negative(self):
        with pytest.raises(DataError, match="row 1"):
            Dataset(np.zeros((2, 1)), [[0.0], [-1.0]])

    def test_rejects_nan_feature(self):
        with pytest.raises(DataError, match="column 'x2'"):
            Dataset([[0.0, np.nan]], [[1.0]])

    def test_subset(self):
        ds = Dataset(np.arange(6.0).reshape(3, 2), [[0.0], [1.0], [2.0]])
        sub = ds.subset([2, 0])
        np.testing.assert_array_equal(sub.labels, [[2.0], [0.0]])


class TestSplit:
    def test_sizes_exact(self):
        assert split(10, 0).sizes() == (8, 1, 1)
        assert split(20000, 3).sizes() == (14000, 3000, 3000)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(10, 3000), seed=st.integers(0, 2**32))
    def test_partition(self, n, seed):
        s = split(n, seed)
        allidx = np.concatenate([s.train, s.val, s.test])
        assert sorted(allidx.tolist()) == list(range(n))
        assert len(s.val) == len(s.test) == int(np.floor(0.15 * n))

    def test_seeded(self):
        a, b = split(100, 9), split(100, 9)
        assert all(np.array_equal(x, y) for x, y in zip((a.train, a.val, a.test),
                                                        (b.train, b.val, b.test)))
        assert not np.array_equal(a.test, split(100, 10).test)

    def test_too_small(self):
        with pytest.raises(UsageError):
            split(9, 0)


class TestBatches:
    def test_covers_and_reshuffles(self):
        idx = np.arange(50) * 2
        e1 = batches(idx, 16, 0, 1)
        e2 = batches(idx, 16, 0, 2)
        assert [len(b) for b in e1] == [16, 16, 16, 2]
        assert sorted(np.concatenate(e1).tolist()) == idx.tolist()
        assert not np.array_equal(np.concatenate(e1), np.concatenate(e2))
        assert np.array_equal(np.concatenate(e1), np.concatenate(batches(idx, 16, 0, 1)))


class TestStandardizer:
    def test_train_statistics(self):
        ds = Dataset(np.array([[1.0, 5], [3.0, 5], [100.0, 5]] + [[0.0, 5]] * 7),
                     np.zeros((10, 1)))
        s = split(ds, 0)
        out, st_ = standardize(ds, s)
        tr = out.features[s.train]
        np.testing.assert_allclose(tr[:, 0].mean(), 0, atol=1e-12)
        np.testing.assert_allclose(tr[:, 0].std(), 1, rtol=1e-12)
        # zero-variance feature maps to 0 rather than dividing by zero
        np.testing.assert_array_equal(out.features[:, 1], 0.0)

    def test_scale_one_for_constant(self):
        s = Standardizer.fit(np.ones((4, 2)))
        np.testing.assert_array_equal(s.scale, [1, 1])


class TestSynthetic:
    def test_shapes_and_kind(self):
        ds, truth = generate_synthetic(GenConfig(200, 5, 4, kind="count", seed=1))
        assert ds.features.shape == (200, 5) and ds.labels.shape == (200, 4)
        assert np.all(ds.labels == np.round(ds.labels))
        assert truth["l"] == 4 and np.array(truth["sigma"]).shape == (4, 4)

    def test_positive_correlation_of_patterns(self):
        ds, _ = generate_synthetic(GenConfig(4000, 3, 4, seed=2, corr=1.5))
        b = (ds.labels > 0).astype(float)
        c = np.corrcoef(b.T)
        assert np.all(c[np.triu_indices(4, 1)] > 0)

    def test_zero_truncated_counts(self):
        ds, _ = generate_synthetic(GenConfig(1000, 3, 3, kind="count", seed=3,
                                             log_mean_offset=-2.0))
        assert ds.nonzero_fraction > 0
        assert np.all((ds.labels == 0) | (ds.labels >= 1))

    def test_reproducible(self):
        a, _ = generate_synthetic(GenConfig(50, 2, 2, seed=7))
        b, _ = generate_synthetic(GenConfig(50, 2, 2, seed=7))
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_head_signal_defaults_to_signal(self):
        a, ta = generate_synthetic(GenConfig(20, 2, 2, seed=7, signal=2.0))
        b, tb = generate_synthetic(GenConfig(20, 2, 2, seed=7, signal=2.0, head_signal=2.0))
        assert ta["A_head"] == tb["A_head"]

    @pytest.mark.parametrize("bad", [dict(n=0), dict(m=0), dict(l=0)])
    def test_bad_dims(self, bad):
        kw = dict(n=5, m=2, l=2)
        kw.update(bad)
        with pytest.raises(UsageError):
            GenConfig(**kw)

    def test_continuous_moments(self):
        # log of positives is N(mu', Sigma') on the present coordinates; with no
        # signal and independent presence the marginal is exact
        C = np.diag([1e-3, 1e-3])
        ds, t = generate_synthetic(GenConfig(20000, 2, 2, seed=5, signal=0.0, C=C,
                                             C_head=np.diag([0.5, 0.5]), log_mean_offset=0.2))
        logs = np.log(ds.labels[:, 0][ds.labels[:, 0] > 0])
        assert logs.mean() == pytest.approx(0.2, abs=0.03)
        assert logs.var() == pytest.approx(1.25, abs=0.05)
