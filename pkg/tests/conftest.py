import struct

import numpy as np
import pytest

from psa.data import Dataset, gen_dataset
from psa.mlp import MlpConfig, train_sgd


def write_idx_pair(directory, images, labels):
    """Write an IDX image/label file pair (big-endian) and return the paths."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    images_path = directory / "images.idx3-ubyte"
    labels_path = directory / "labels.idx1-ubyte"
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, count, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, labels.size))
        f.write(labels.tobytes())
    return images_path, labels_path


def toy_blobs(n_per_class, dim=6, num_classes=3, seed=0, spread=0.25):
    """Well-separated Gaussian blobs, one per class, as a Dataset."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 1.0, (num_classes, dim)) * 2.0
    pixels = np.concatenate([
        centers[c] + rng.normal(0.0, spread, (n_per_class, dim))
        for c in range(num_classes)
    ])
    labels = np.repeat(np.arange(num_classes), n_per_class)
    return Dataset(pixels, labels, split="toy", num_classes=num_classes)


@pytest.fixture(scope="session")
def small_digits():
    return gen_dataset(sizes=(60, 12, 30), seed=3)


@pytest.fixture(scope="session")
def blob_data():
    return toy_blobs(12, dim=6, num_classes=3, seed=4)


@pytest.fixture(scope="session")
def blob_model(blob_data):
    config = MlpConfig((6, 8, 3), unit_kind="logistic", learning_rate=0.2,
                       epochs=30, batch_size=6, seed=11)
    model, _ = train_sgd(config, blob_data, blob_data)
    return model
