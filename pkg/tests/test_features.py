import numpy as np
import pytest

from gtn.errors import UnsupportedOperationError, ValidationError
from gtn.features import (FeatureMap, export_features_csv, feature_grad, make_feature_map,
                          map_input, pretrain_features, trig_squared)


class TestFixedMaps:
    def test_trig_endpoints(self):
        np.testing.assert_allclose(map_input(FeatureMap("trig-squared"), 0.0), [1.0, 0.0])
        np.testing.assert_allclose(map_input(FeatureMap("trig-squared"), 0.5), [0.5, 0.5])

    def test_trig_simplex(self, rng):
        v = trig_squared(rng.uniform(0, 1, 1000))
        assert np.all(v >= 0)
        np.testing.assert_allclose(v.sum(axis=1), 1.0, atol=1e-12)

    def test_linear(self):
        np.testing.assert_allclose(map_input(FeatureMap("linear"), 0.3), [1.0, 0.3])

    def test_clamp_counts(self):
        fm = FeatureMap("trig-squared")
        out = fm(np.array([-0.2, 0.5, 1.3]))
        np.testing.assert_allclose(out[0], [1.0, 0.0])
        np.testing.assert_allclose(out[2], [0.0, 1.0], atol=1e-15)
        assert fm.clamp_count == 2

    def test_out_dim_checked(self):
        with pytest.raises(ValidationError):
            FeatureMap("linear", out_dim=3)


class TestLearnableTable:
    def table(self):
        return FeatureMap("learnable-table", out_dim=2, bins=4,
                          table=np.arange(8.0).reshape(4, 2))

    def test_lookup(self):
        np.testing.assert_array_equal(self.table()(0.30), [2.0, 3.0])

    def test_top_edge(self):
        np.testing.assert_array_equal(self.table()(1.0), [6.0, 7.0])

    def test_grad_routing(self):
        fm = FeatureMap("learnable-table", bins=2, table=np.zeros((2, 2)))
        g = feature_grad(fm, 0.9, np.array([1.0, 2.0]))
        np.testing.assert_array_equal(g, [[0, 0], [1, 2]])

    def test_grad_batch_same_bin(self):
        fm = self.table()
        g = feature_grad(fm, np.array([0.01, 0.1, 0.2]), np.ones((3, 2)))
        assert np.all(g[1:] == 0) and np.all(g[0] == 3)

    def test_grad_fixed_map(self):
        with pytest.raises(UnsupportedOperationError):
            feature_grad(FeatureMap("linear"), 0.5, np.ones(2))

    def test_grad_matches_fd(self, rng):
        fm = make_feature_map("learnable-table", bins=8, seed=3)
        x = rng.uniform(0, 1, 5)
        w = rng.standard_normal((5, 2))

        def f(table):
            return float(np.sum(np.tanh(FeatureMap("learnable-table", bins=8, table=table)(x) * w)))

        up = (1 - np.tanh(fm(x) * w) ** 2) * w
        g = feature_grad(fm, x, up)
        h = 1e-6
        fd = np.zeros_like(fm.table)
        for idx in np.ndindex(fm.table.shape):
            tp, tm = fm.table.copy(), fm.table.copy()
            tp[idx] += h
            tm[idx] -= h
            fd[idx] = (f(tp) - f(tm)) / (2 * h)
        err = np.abs(fd - g).max() / np.abs(g).max()
        assert err < 1e-6

    def test_init_near_trig_curve(self):
        fm = make_feature_map("learnable-table", bins=16, seed=0, noise=0.0)
        x = np.linspace(0, 1, 1001)
        # the table value equals the curve at a point within half a bin of x
        xs = np.linspace(0, 1, 1001)
        for xi in x:
            row = fm(xi)
            c = (min(int(xi * 16), 15) + 0.5) / 16
            assert abs(c - xi) <= 1 / 32 + 1e-12
            np.testing.assert_allclose(row, trig_squared(c), atol=1e-12)
        assert xs.size == 1001

    def test_per_variable(self):
        fm = make_feature_map("learnable-table", bins=4, per_variable=True, n_variables=3, seed=1)
        assert fm.table.shape == (3, 4, 2)
        x = np.array([[0.1, 0.1, 0.1]])
        out = fm(x)
        assert out.shape == (1, 3, 2)
        assert not np.allclose(out[0, 0], out[0, 1])


class TestPretrain:
    def test_threshold_set_separable(self, rng):
        x = rng.uniform(0, 1, (400, 2))
        y = (x[:, 0] > 0.5).astype(int)
        fm = make_feature_map("learnable-table", bins=16, seed=0)
        out, (W, b), hist = pretrain_features(fm, x, y, 2, epochs=300, return_history=True)
        z = out(x).reshape(400, -1) @ W.T + b
        assert np.mean(z.argmax(1) == y) == 1.0
        assert hist[-1] < hist[0]

    def test_constant_dataset(self):
        x = np.full((40, 2), 0.3)
        y = np.array([0, 1] * 20)
        fm = make_feature_map("learnable-table", bins=4, seed=0)
        _, _, hist = pretrain_features(fm, x, y, 2, epochs=300, return_history=True)
        assert hist[-1] == pytest.approx(np.log(2), abs=1e-6)

    def test_empty(self):
        fm = make_feature_map("learnable-table", bins=4)
        with pytest.raises(ValidationError):
            pretrain_features(fm, np.zeros((0, 2)), np.zeros(0, int))

    def test_original_untouched(self, rng):
        fm = make_feature_map("learnable-table", bins=4)
        before = fm.table.copy()
        pretrain_features(fm, rng.uniform(0, 1, (10, 2)), np.arange(10) % 2, epochs=3)
        np.testing.assert_array_equal(fm.table, before)


class TestExport:
    def test_rows_normalized(self, tmp_path):
        fm = make_feature_map("learnable-table", bins=16, seed=0)
        path = tmp_path / "f.csv"
        export_features_csv(fm, path)
        rows = np.loadtxt(path, delimiter=",", skiprows=1)
        assert rows.shape == (16, 3)
        np.testing.assert_allclose(np.linalg.norm(rows[:, 1:], axis=1), 1.0, atol=1e-12)

    def test_untrained_follows_curve(self, tmp_path):
        fm = make_feature_map("learnable-table", bins=16, seed=0, noise=0.0)
        path = tmp_path / "f.csv"
        export_features_csv(fm, path)
        rows = np.loadtxt(path, delimiter=",", skiprows=1)
        ref = trig_squared(rows[:, 0])
        ref /= np.linalg.norm(ref, axis=1, keepdims=True)
        np.testing.assert_allclose(rows[:, 1:], ref, atol=1e-12)

    def test_fixed_map_rejected(self, tmp_path):
        with pytest.raises(UnsupportedOperationError):
            export_features_csv(FeatureMap("trig-squared"), tmp_path / "f.csv")
