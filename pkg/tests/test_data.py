import numpy as np
import pytest

from can_ssl import data as datamod
from can_ssl.data import (ImageDataset, cifar10_available, load_cifar10, read_cifar10_bin, synthetic_dataset,
                          write_cifar10_bin)


def _fake_cifar(n, seed):
    g = np.random.default_rng(seed)
    return ImageDataset(g.integers(0, 256, (n, 32, 32, 3), dtype=np.uint8), g.integers(0, 10, n).astype(np.int64))


def test_cifar_record_layout(tmp_path):
    # one record by hand: label byte, then the red plane, green plane, blue plane
    img = np.zeros((32, 32, 3), np.uint8)
    img[0, 1] = (10, 20, 30)
    raw = np.concatenate([[7], img[..., 0].ravel(), img[..., 1].ravel(), img[..., 2].ravel()]).astype(np.uint8)
    path = tmp_path / "one.bin"
    raw.tofile(path)
    ds = read_cifar10_bin(path)
    assert ds.labels.tolist() == [7]
    np.testing.assert_array_equal(ds.images[0], img)


def test_cifar_roundtrip_and_directory_loading(tmp_path):
    root = tmp_path / "cifar-10-batches-bin"
    root.mkdir()
    parts = [_fake_cifar(3, i) for i in range(6)]
    for i, p in enumerate(parts[:5]):
        write_cifar10_bin(root / f"data_batch_{i + 1}.bin", p)
    write_cifar10_bin(root / "test_batch.bin", parts[5])
    assert cifar10_available(tmp_path) and cifar10_available(root)
    train = load_cifar10(tmp_path, "train")
    assert len(train) == 15
    np.testing.assert_array_equal(train.images[3:6], parts[1].images)
    np.testing.assert_array_equal(load_cifar10(tmp_path, "test").labels, parts[5].labels)


def test_cifar_errors(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"\x00" * 100)
    with pytest.raises(ValueError):
        read_cifar10_bin(bad)
    with pytest.raises(FileNotFoundError):
        load_cifar10(tmp_path)
    assert not cifar10_available(tmp_path) and not cifar10_available("")


def test_env_dir(monkeypatch):
    monkeypatch.setenv("CAN_CIFAR10_DIR", "/some/where")
    assert datamod.env_cifar_dir() == "/some/where"
    monkeypatch.delenv("CAN_CIFAR10_DIR")
    assert datamod.env_cifar_dir() is None


def test_synthetic_is_seeded_and_balanced():
    a = synthetic_dataset(40, num_classes=4, image_size=16, seed=1)
    b = synthetic_dataset(40, num_classes=4, image_size=16, seed=1)
    c = synthetic_dataset(40, num_classes=4, image_size=16, seed=2)
    np.testing.assert_array_equal(a.images, b.images)
    assert not np.array_equal(a.images, c.images)
    assert a.images.dtype == np.uint8 and a.images.shape == (40, 16, 16, 3)
    assert np.bincount(a.labels).tolist() == [10] * 4
    assert a.num_classes == 4 and a.image_size == (16, 16)
    with pytest.raises(ValueError):
        synthetic_dataset(4, num_classes=1)


def test_synthetic_classes_are_linearly_separable_in_pixels():
    # labels carry signal, but raw pixels are far from solving the task (chance is 0.25)
    from sklearn.linear_model import LogisticRegression

    tr = synthetic_dataset(400, 4, 16, seed=0)
    te = synthetic_dataset(200, 4, 16, seed=9)
    clf = LogisticRegression(max_iter=2000).fit(tr.images.reshape(400, -1) / 255.0, tr.labels)
    assert clf.score(te.images.reshape(200, -1) / 255.0, te.labels) > 0.3
