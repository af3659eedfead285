import numpy as np
import pytest

from compressible_features.data import (
    DatasetSpec,
    generate_synthetic,
    load_binary_records,
    save_binary_records,
    split,
)


def linear_probe_error(ds, steps=300, lr=0.5):
    """Softmax regression by full-batch gradient descent; validation error in percent."""
    w = np.zeros((ds.dim, ds.num_classes))
    onehot = np.eye(ds.num_classes)[ds.y_train]
    for _ in range(steps):
        logits = ds.x_train @ w
        p = np.exp(logits - logits.max(1, keepdims=True))
        p /= p.sum(1, keepdims=True)
        w -= lr * ds.x_train.T @ (p - onehot) / len(onehot)
    return 100 * np.mean((ds.x_val @ w).argmax(1) != ds.y_val)


def test_same_seed_identical():
    a, b = generate_synthetic(DatasetSpec(seed=3)), generate_synthetic(DatasetSpec(seed=3))
    for name in ("x_train", "y_train", "x_val", "y_val"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    c = generate_synthetic(DatasetSpec(seed=4))
    assert not np.array_equal(a.x_train, c.x_train)


def test_shapes_and_labels():
    ds = generate_synthetic(DatasetSpec(num_classes=5, dim=12, train_size=300, val_size=70))
    assert ds.x_train.shape == (300, 12) and ds.x_val.shape == (70, 12)
    assert ds.y_train.min() >= 0 and ds.y_train.max() < 5


def test_large_margin_linearly_separable():
    ds = generate_synthetic(DatasetSpec(margin=20.0, train_size=1000, val_size=500))
    assert linear_probe_error(ds) < 1.0


def test_zero_margin_is_chance():
    ds = generate_synthetic(DatasetSpec(margin=0.0, train_size=2000, val_size=2000))
    err = linear_probe_error(ds)
    assert abs(err - 90.0) < 5.0


def test_degenerate_spec_rejected():
    with pytest.raises(ValueError):
        generate_synthetic(DatasetSpec(num_classes=1))
    with pytest.raises(ValueError):
        generate_synthetic(DatasetSpec(dim=0))


def test_binary_records_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.integers(0, 256, size=(40, 9)) / 255.0
    y = rng.integers(0, 10, size=40)
    path = tmp_path / "r.bin"
    save_binary_records(path, x, y)
    assert path.stat().st_size == 40 * 10
    x2, y2 = load_binary_records(path, 9, 10)
    assert len(y2) == path.stat().st_size // 10
    np.testing.assert_array_equal(x2, x)
    np.testing.assert_array_equal(y2, y)
    ds = split(x2, y2, 10)
    assert len(ds.y_train) + len(ds.y_val) == 40


def test_split_is_disjoint_partition():
    x = np.arange(60, dtype=float).reshape(60, 1)
    ds = split(x, np.zeros(60, dtype=int), 2)
    assert set(ds.x_train[:, 0]).isdisjoint(ds.x_val[:, 0])
    assert len(ds.x_val) == 10


def test_empty_and_malformed_files(tmp_path):
    empty = tmp_path / "e.bin"
    empty.write_bytes(b"")
    x, y = load_binary_records(empty, 4)
    assert x.shape == (0, 4) and y.size == 0
    bad = tmp_path / "b.bin"
    bad.write_bytes(b"\x00" * 7)
    with pytest.raises(ValueError):
        load_binary_records(bad, 4)
    high = tmp_path / "h.bin"
    high.write_bytes(bytes([12, 1, 2, 3, 4]))
    with pytest.raises(ValueError):
        load_binary_records(high, 4, num_classes=10)
