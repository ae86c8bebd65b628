import numpy as np
import pytest

from uqsanity.data import (CIFAR_RECORD, DataFormatError, encode_cifar_records, load_cifar10,
                           load_tabular_csv, make_synthetic_cifar, parse_cifar_records,
                           stratified_subset, synthetic_linear, synthetic_shapes,
                           write_cifar10, write_housing_csv)


class TestCifarFormat:
    def test_one_record(self, tmp_path):
        raw = bytes([7]) + bytes(range(256)) * 12
        assert len(raw) == CIFAR_RECORD
        X, y = parse_cifar_records(raw)
        assert X.shape == (1, 3, 32, 32)
        assert y.tolist() == [7]

    def test_channel_planar_layout(self):
        raw = bytearray(CIFAR_RECORD)
        raw[1 + 1024 + 32 * 2 + 5] = 200  # green, row 2, col 5
        X, _ = parse_cifar_records(bytes(raw))
        assert X[0, 1, 2, 5] == 200 and X.sum() == 200

    def test_truncated(self):
        with pytest.raises(DataFormatError, match="truncated"):
            parse_cifar_records(bytes(CIFAR_RECORD + 10))

    def test_bad_label(self):
        raw = bytearray(2 * CIFAR_RECORD)
        raw[CIFAR_RECORD] = 10
        with pytest.raises(DataFormatError, match="record 1"):
            parse_cifar_records(bytes(raw))

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        X = rng.integers(0, 256, (6, 3, 32, 32), dtype=np.uint8)
        y = rng.integers(0, 10, 6)
        X2, y2 = parse_cifar_records(encode_cifar_records(X, y))
        np.testing.assert_array_equal(X2, X)
        np.testing.assert_array_equal(y2, y)

    def test_stratified_counts(self):
        labels = np.repeat(np.arange(10), 300)
        idx = stratified_subset(labels, 1000, np.random.default_rng(0))
        assert np.bincount(labels[idx]).tolist() == [100] * 10
        assert len(set(idx.tolist())) == 1000


class TestLoadCifar:
    def test_directory_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        X = rng.integers(0, 256, (20, 3, 32, 32), dtype=np.uint8)
        y = np.arange(20) % 10
        write_cifar10(tmp_path, X, y, X[:10], y[:10])
        assert len(list(tmp_path.glob("data_batch_*.bin"))) == 5
        s = load_cifar10(tmp_path)
        np.testing.assert_array_equal(s.y_train, y)
        restored = (s.X_train * s.channel_std[None, :, None, None]
                    + s.channel_mean[None, :, None, None]) * 255.0
        np.testing.assert_allclose(restored, X, atol=1e-3)

    def test_standardized_per_channel(self, tmp_path):
        make_synthetic_cifar(tmp_path, n_train=200, n_test=50, seed=0)
        s = load_cifar10(tmp_path, subset_train=100, subset_eval=20)
        assert s.X_train.shape == (100, 3, 32, 32) and s.X_test.shape == (20, 3, 32, 32)
        np.testing.assert_allclose(s.X_train.astype(np.float64).mean(axis=(0, 2, 3)), 0, atol=1e-5)
        np.testing.assert_allclose(s.X_train.astype(np.float64).std(axis=(0, 2, 3)), 1, atol=1e-5)
        assert np.bincount(s.y_test).tolist() == [2] * 10

    def test_synthetic_shapes_balanced(self):
        X, y = synthetic_shapes(50, seed=3)
        assert X.dtype == np.uint8 and np.bincount(y).tolist() == [5] * 10


TOY = "a,b,target\n1.5,2,3\n-4,0.25,6\n7,8,9.125\n"


class TestTabular:
    def test_toy_exact(self, tmp_path):
        p = tmp_path / "toy.csv"
        p.write_text(TOY)
        from uqsanity.data import read_numeric_csv
        X, y, names = read_numeric_csv(p, "target")
        assert names == ["a", "b"]
        assert X.tolist() == [[1.5, 2.0], [-4.0, 0.25], [7.0, 8.0]]
        assert y.tolist() == [3.0, 6.0, 9.125]

    def test_non_numeric_reports_row(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,target\n1,2\nx,3\n")
        with pytest.raises(DataFormatError, match="row 1"):
            load_tabular_csv(p, "target")

    def test_missing_column(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text(TOY)
        with pytest.raises(DataFormatError, match="missing column"):
            load_tabular_csv(p, "MedHouseVal")

    def test_split_deterministic_and_disjoint(self, tmp_path):
        p = write_housing_csv(tmp_path / "h.csv", n=500, seed=0)
        a, b = load_tabular_csv(p, seed=4), load_tabular_csv(p, seed=4)
        np.testing.assert_array_equal(a.train_index, b.train_index)
        assert not set(a.train_index) & set(a.test_index)
        assert len(a.train_index) + len(a.test_index) == 500
        c = load_tabular_csv(p, seed=5)
        assert not np.array_equal(a.test_index, c.test_index)

    def test_train_standardized(self, tmp_path):
        p = write_housing_csv(tmp_path / "h.csv", n=800, seed=1)
        s = load_tabular_csv(p)
        assert s.X_train.shape[1] == 8
        np.testing.assert_allclose(s.X_train.astype(np.float64).mean(axis=0), 0, atol=1e-6)
        np.testing.assert_allclose(s.X_train.astype(np.float64).std(axis=0), 1, atol=1e-6)
        # test split uses train statistics, so it is only approximately centred
        assert np.abs(s.X_test.mean(axis=0)).max() < 0.5

    def test_synthetic_linear(self):
        X, y = synthetic_linear(50, weights=(2.0, -1.0), seed=0)
        np.testing.assert_allclose(y[:, 0], X @ np.array([2.0, -1.0], dtype=np.float32), rtol=1e-6)
