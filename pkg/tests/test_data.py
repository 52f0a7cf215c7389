import struct

import numpy as np
import pytest

from robustdistill.data import (
    AugmentConfig,
    Dataset,
    FormatError,
    augment,
    batches,
    gen_synthetic,
    load_cifar_binary,
    load_idx,
    write_idx,
)


def _mnist_like(tmp_path, n=3):
    pix = np.arange(n * 28 * 28, dtype=np.uint32).reshape(n, 28, 28) % 256
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    img.write_bytes(b"\x00\x00\x08\x03" + struct.pack(">3I", n, 28, 28) + pix.astype(np.uint8).tobytes())
    lab.write_bytes(b"\x00\x00\x08\x01" + struct.pack(">I", n) + bytes(range(n)))
    return img, lab, pix


def test_load_idx_mnist_layout(tmp_path):
    img, lab, pix = _mnist_like(tmp_path)
    ds = load_idx(img, lab, 10)
    assert ds.images.shape == (3, 1, 28, 28) and ds.labels.tolist() == [0, 1, 2]
    np.testing.assert_array_equal(ds.images[:, 0], (pix / 255).astype(np.float32))
    assert ds.images[0, 0, 255 // 28, 255 % 28] == 1.0


def test_idx_errors(tmp_path):
    img, lab, _ = _mnist_like(tmp_path)
    raw = img.read_bytes()
    (tmp_path / "bad").write_bytes(b"\x00\x00\x09\x03" + raw[4:])
    with pytest.raises(FormatError):
        load_idx(tmp_path / "bad", lab)
    (tmp_path / "short").write_bytes(raw[:-5])
    with pytest.raises(FormatError, match="expected"):
        load_idx(tmp_path / "short", lab)


def test_idx_float_roundtrip_exact(tmp_path, rng):
    x = rng.random((4, 1, 5, 5)).astype(np.float32)
    y = np.array([1, 0, 3, 2])
    write_idx(tmp_path / "a", tmp_path / "b", x, y)
    ds = load_idx(tmp_path / "a", tmp_path / "b", 4)
    assert ds.images.tobytes() == x.tobytes() and ds.labels.tolist() == y.tolist()
    write_idx(tmp_path / "c", tmp_path / "d", x, y, as_bytes=True)
    back = load_idx(tmp_path / "c", tmp_path / "d", 4).images
    assert np.abs(back - x).max() <= 0.5 / 255 + 1e-7


def test_cifar_binary(tmp_path):
    rec = np.zeros((2, 3073), np.uint8)
    rec[0, 0], rec[1, 0] = 3, 7
    rec[1, 1:] = 255
    rec[0, 1 + 1024] = 128  # first green pixel
    path = tmp_path / "data_batch_1.bin"
    path.write_bytes(rec.tobytes())
    ds = load_cifar_binary([path])
    assert ds.images.shape == (2, 3, 32, 32) and ds.labels.tolist() == [3, 7]
    assert ds.images[0, 1, 0, 0] == np.float32(128 / 255) and ds.images[1].min() == 1.0
    (tmp_path / "cut.bin").write_bytes(rec.tobytes()[:-10])
    with pytest.raises(FormatError, match="offset 3073"):
        load_cifar_binary(tmp_path / "cut.bin")
    (tmp_path / "empty.bin").write_bytes(b"")
    assert len(load_cifar_binary(tmp_path / "empty.bin")) == 0


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.full((1, 1, 2, 2), 1.5), [0], 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((1, 1, 2, 2)), [2], 2)


def test_synthetic_is_seeded_and_balanced():
    a = gen_synthetic("gaussians", 500, 5, seed=3)
    b = gen_synthetic("gaussians", 500, 5, seed=3)
    assert a.images.tobytes() == b.images.tobytes()
    assert np.bincount(a.labels).tolist() == [100] * 5
    assert a.images.shape == (500, 1, 8, 8)
    rings = gen_synthetic("rings", 50, 4, seed=0, channels=3)
    assert rings.images.shape == (50, 3, 8, 8) and rings.images.min() >= 0
    with pytest.raises(ValueError):
        gen_synthetic("spirals")


def test_split_off_is_a_partition():
    ds = gen_synthetic(n=200)
    train, val = ds.split_off(0.1, 4)
    assert len(train) == 180 and len(val) == 20
    joined = np.concatenate([train.images, val.images]).reshape(200, -1)
    assert sorted(map(bytes, joined)) == sorted(map(bytes, ds.images.reshape(200, -1)))


def test_augment_zero_offset_and_flip(rng):
    x = rng.random((3, 2, 5, 5)).astype(np.float32)
    cfg = AugmentConfig.standard()
    same = augment(x, cfg, offsets=np.full((3, 2), 4), flips=np.zeros(3, bool))
    np.testing.assert_array_equal(same, x)
    flipped = augment(x, cfg, offsets=np.full((3, 2), 4), flips=np.ones(3, bool))
    np.testing.assert_array_equal(flipped, x[..., ::-1])
    shifted = augment(x, cfg, offsets=np.array([[5, 4]] * 3), flips=np.zeros(3, bool))
    np.testing.assert_array_equal(shifted[:, :, :-1], x[:, :, 1:])
    assert not shifted[:, :, -1].any()
    rand = augment(x, cfg, np.random.default_rng(0))
    assert rand.shape == x.shape and rand.dtype == x.dtype


def test_batches_cover_everything_once():
    seen = np.concatenate(list(batches(10, 3, np.random.default_rng(0))))
    assert sorted(seen.tolist()) == list(range(10))
    assert [len(b) for b in batches(10, 4)] == [4, 4, 2]
