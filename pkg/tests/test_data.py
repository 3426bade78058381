import csv
from pathlib import Path

import numpy as np
import pytest

from psa import data
from psa.errors import ConsistencyError, DomainError, FormatError, IoError
from conftest import write_idx_pair

GOLDEN = Path(__file__).parent / "golden"


def test_template_basics():
    t = data.builtin_templates()
    lit = t.glyphs.sum(axis=1)
    assert lit[1] < lit[8]
    grid = t.glyphs.reshape(10, 28, 28)
    assert grid[:, :2].sum() == 0 and grid[:, -2:].sum() == 0
    assert grid[:, :, :2].sum() == 0 and grid[:, :, -2:].sum() == 0
    assert set(np.unique(t.glyphs)) == {0.0, 1.0}


def test_template_hamming_matches_golden():
    t = data.builtin_templates()
    with open(GOLDEN / "template_hamming.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 45
    for row in rows:
        a, b, expected = int(row["a"]), int(row["b"]), int(row["distance"])
        got = int(np.sum(t.glyphs[a] != t.glyphs[b]))
        assert got == expected
        assert got >= 40


def test_corrupt_reproducible_and_nonnegative():
    t = data.builtin_templates().image(5)
    out1 = data.corrupt(t, np.random.default_rng(99))
    out2 = data.corrupt(t, np.random.default_rng(99))
    assert out1.pixels.tobytes() == out2.pixels.tobytes()
    assert out1.label == 5
    assert out1.pixels.shape == (784,)
    assert out1.pixels.min() >= 0.0
    assert np.all(np.isfinite(out1.pixels))


def test_corrupt_flip_fraction():
    # sigma=0 isolates the flip step; 128 corruptions give ~1e5 pixels
    t = data.builtin_templates().image(0)
    rng = np.random.default_rng(12)
    flipped = 0
    total = 0
    for _ in range(128):
        out = data.corrupt(t, rng, noise_sigma=0.0)
        flipped += int(np.sum(out.pixels != t.pixels))
        total += t.pixels.size
    assert total >= 100_000
    assert abs(flipped / total - 0.2) < 0.005


def test_corrupt_rejects_non_binary():
    bad = data.LabeledImage(np.full(784, 0.5), 3)
    with pytest.raises(DomainError):
        data.corrupt(bad, np.random.default_rng(0))


def test_gen_dataset_sizes_and_determinism():
    a = data.gen_dataset(sizes=(100, 10, 10), seed=21)
    b = data.gen_dataset(sizes=(100, 10, 10), seed=21)
    assert tuple(len(s) for s in a) == (100, 10, 10)
    assert [s.split for s in a] == ["train", "valid", "test"]
    for x, y in zip(a, b):
        assert x.pixels.tobytes() == y.pixels.tobytes()
        assert x.labels.tobytes() == y.labels.tobytes()
    c = data.gen_dataset(sizes=(100, 10, 10), seed=22)
    assert a[0].pixels.tobytes() != c[0].pixels.tobytes()
    assert a[0].pixels.min() >= 0.0


def test_gen_dataset_prefix_stability():
    # per-sample streams: a longer split starts with the shorter one
    small = data.gen_dataset(sizes=(20, 10, 10), seed=5)[0]
    large = data.gen_dataset(sizes=(50, 10, 10), seed=5)[0]
    assert large.pixels[:20].tobytes() == small.pixels.tobytes()
    assert large.labels[:20].tobytes() == small.labels.tobytes()


def test_gen_dataset_class_balance_full_train():
    train = data.gen_dataset(sizes=(50_000, 10, 10), seed=0)[0]
    counts = np.bincount(train.labels, minlength=10)
    sigma = np.sqrt(50_000 * 0.1 * 0.9)
    assert np.all(np.abs(counts - 5_000) <= 3 * sigma)


def test_gen_dataset_rejects_tiny_splits():
    with pytest.raises(DomainError):
        data.gen_dataset(sizes=(100, 5, 10), seed=0)


def test_dataset_cache_roundtrip(tmp_path):
    ds = data.gen_dataset(sizes=(25, 10, 10), seed=8)[0]
    path = tmp_path / "train.psad"
    data.save_dataset(path, ds)
    back = data.load_dataset(path)
    assert back.split == "train"
    assert back.labels.tobytes() == ds.labels.tobytes()
    np.testing.assert_array_equal(back.pixels,
                                  ds.pixels.astype(np.float32).astype(np.float64))
    # saving the loaded copy reproduces the file byte for byte
    path2 = tmp_path / "again.psad"
    data.save_dataset(path2, back)
    assert path.read_bytes() == path2.read_bytes()


def test_dataset_cache_errors(tmp_path):
    path = tmp_path / "bad.psad"
    path.write_bytes(b"NOPE" + b"\0" * 16)
    with pytest.raises(FormatError):
        data.load_dataset(path)
    ds = data.gen_dataset(sizes=(12, 10, 10), seed=8)[0]
    good = tmp_path / "good.psad"
    data.save_dataset(good, ds)
    truncated = tmp_path / "trunc.psad"
    truncated.write_bytes(good.read_bytes()[:-10])
    with pytest.raises(IoError):
        data.load_dataset(truncated)


def test_load_idx_known_bytes(tmp_path):
    img = np.arange(784, dtype=np.uint8).reshape(1, 28, 28) % 256
    images_path, labels_path = write_idx_pair(tmp_path, img, [7])
    ds = data.load_idx(images_path, labels_path)
    assert len(ds) == 1 and ds.dim == 784
    assert ds.labels[0] == 7
    np.testing.assert_array_equal(ds.pixels[0], img.reshape(784) / 255.0)
    assert ds.pixels.min() >= 0.0 and ds.pixels.max() <= 1.0


def test_load_idx_errors(tmp_path):
    img = np.zeros((2, 28, 28), dtype=np.uint8)
    images_path, labels_path = write_idx_pair(tmp_path, img, [1, 2])

    bad_magic = tmp_path / "badmagic.idx"
    raw = bytearray(images_path.read_bytes())
    raw[3] = 0x99
    bad_magic.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        data.load_idx(bad_magic, labels_path)

    truncated = tmp_path / "short.idx"
    truncated.write_bytes(images_path.read_bytes()[:-5])
    with pytest.raises(IoError):
        data.load_idx(truncated, labels_path)

    mismatch_dir = tmp_path / "mismatch"
    mismatch_dir.mkdir()
    _, mismatch_labels = write_idx_pair(mismatch_dir, img, [1, 2, 3])
    with pytest.raises(ConsistencyError):
        data.load_idx(images_path, mismatch_labels)

    out_of_range_dir = tmp_path / "range"
    out_of_range_dir.mkdir()
    _, bad_labels = write_idx_pair(out_of_range_dir, img, [1, 10])
    with pytest.raises(ConsistencyError):
        data.load_idx(images_path, bad_labels)


def test_dataset_restrict_to():
    ds = data.gen_dataset(sizes=(60, 10, 10), seed=2)[0]
    sub = ds.restrict_to({3, 5})
    assert set(np.unique(sub.labels)) <= {3, 5}
    assert len(sub) == int(np.sum((ds.labels == 3) | (ds.labels == 5)))
    with pytest.raises(DomainError):
        # generated labels are always < 10
        ds.restrict_to({77})
