"""Datasets: synthetic noisy-digit generation and IDX (MNIST-style) ingestion.

The synthetic set corrupts ten fixed 28x28 binary digit templates with bit
flips, additive Gaussian noise, and truncation at zero.  Generation derives
one RNG stream per (seed, split, sample index), so samples can be produced
in any order, or in parallel, with identical results.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, DomainError, FormatError, IoError

IMAGE_SIDE = 28
IMAGE_PIXELS = IMAGE_SIDE * IMAGE_SIDE
NUM_CLASSES = 10

FLIP_PROB = 0.2
# additive noise is N(0, 0.1) read as variance 0.1; pass noise_sigma=0.1 for
# the standard-deviation reading
NOISE_SIGMA = math.sqrt(0.1)

DESK_SIZES = (10_000, 2_000, 2_000)
FULL_SIZES = (50_000, 10_000, 10_000)

DATASET_MAGIC = b"PSAD"
DATASET_VERSION = 1

_IDX_IMAGE_MAGIC = 0x00000803
_IDX_LABEL_MAGIC = 0x00000801


@dataclass
class LabeledImage:
    """One sample: a flat pixel vector and its class label."""

    pixels: np.ndarray
    label: int


@dataclass
class Dataset:
    """A split of samples stored as parallel arrays.

    pixels: (N, d) float64, labels: (N,) int64 with every label below
    num_classes.  Row n of `pixels` belongs with labels[n].
    """

    pixels: np.ndarray
    labels: np.ndarray
    split: str = "unknown"
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.pixels.ndim != 2 or self.pixels.shape[0] == 0:
            raise DomainError(f"pixels must be a non-empty (N, d) array, got {self.pixels.shape}")
        if self.labels.shape != (self.pixels.shape[0],):
            raise ConsistencyError(
                f"{self.pixels.shape[0]} samples but {self.labels.shape[0]} labels"
            )
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ConsistencyError("label outside 0..num_classes-1")
        if not np.all(np.isfinite(self.pixels)):
            raise DomainError("non-finite pixel values")

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def __getitem__(self, n: int) -> LabeledImage:
        return LabeledImage(self.pixels[n], int(self.labels[n]))

    @property
    def dim(self) -> int:
        return self.pixels.shape[1]

    def restrict_to(self, classes) -> "Dataset":
        """Samples whose label is in `classes`, in original order."""
        mask = np.isin(self.labels, list(classes))
        if not mask.any():
            raise DomainError(f"no samples with label in {sorted(classes)}")
        return Dataset(self.pixels[mask], self.labels[mask],
                       split=self.split, num_classes=self.num_classes)


@dataclass
class TemplateSet:
    """Ten binary 28x28 glyphs, one per numeral, as rows of a (10, 784) array."""

    glyphs: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.glyphs.shape != (NUM_CLASSES, IMAGE_PIXELS):
            raise DomainError(f"expected (10, 784) glyphs, got {self.glyphs.shape}")
        for digit in range(NUM_CLASSES):
            if not self.glyphs[digit].any():
                raise DomainError(f"glyph for numeral {digit} is empty")

    def image(self, digit: int) -> LabeledImage:
        return LabeledImage(self.glyphs[digit].copy(), digit)


# Seven-segment-style glyph geometry on the 28x28 canvas, 2-px blank margin.
# Each segment is a (row slice, col slice) rectangle of lit pixels.
_SEGMENTS = {
    "top": (slice(2, 5), slice(2, 26)),
    "mid": (slice(12, 16), slice(2, 26)),
    "bottom": (slice(23, 26), slice(2, 26)),
    "top_left": (slice(2, 14), slice(2, 8)),
    "top_right": (slice(2, 14), slice(20, 26)),
    "bottom_left": (slice(14, 26), slice(2, 8)),
    "bottom_right": (slice(14, 26), slice(20, 26)),
}

_DIGIT_SEGMENTS = (
    ("top", "top_left", "top_right", "bottom_left", "bottom_right", "bottom"),
    ("top_right", "bottom_right"),
    ("top", "top_right", "mid", "bottom_left", "bottom"),
    ("top", "top_right", "mid", "bottom_right", "bottom"),
    ("top_left", "top_right", "mid", "bottom_right"),
    ("top", "top_left", "mid", "bottom_right", "bottom"),
    ("top", "top_left", "mid", "bottom_left", "bottom_right", "bottom"),
    ("top", "top_right", "bottom_right"),
    ("top", "top_left", "top_right", "mid", "bottom_left", "bottom_right", "bottom"),
    ("top", "top_left", "top_right", "mid", "bottom_right", "bottom"),
)

_TEMPLATE_CACHE: TemplateSet | None = None


def builtin_templates() -> TemplateSet:
    """The fixed binary digit templates the synthetic datasets are built from."""
    global _TEMPLATE_CACHE
    if _TEMPLATE_CACHE is None:
        glyphs = np.zeros((NUM_CLASSES, IMAGE_SIDE, IMAGE_SIDE))
        for digit, names in enumerate(_DIGIT_SEGMENTS):
            for name in names:
                rows, cols = _SEGMENTS[name]
                glyphs[digit, rows, cols] = 1.0
        _TEMPLATE_CACHE = TemplateSet(glyphs.reshape(NUM_CLASSES, IMAGE_PIXELS))
    return _TEMPLATE_CACHE


def corrupt(
    template: LabeledImage,
    rng: np.random.Generator,
    flip_prob: float = FLIP_PROB,
    noise_sigma: float = NOISE_SIGMA,
) -> LabeledImage:
    """Noise a binary template: flip each pixel with probability `flip_prob`,
    add N(0, noise_sigma^2) per pixel, then truncate negatives to zero."""
    x = np.asarray(template.pixels, dtype=np.float64)
    if not np.isin(x, (0.0, 1.0)).all():
        raise DomainError("corrupt() expects a binary template")
    flips = rng.random(x.shape) < flip_prob
    x = np.where(flips, 1.0 - x, x)
    x = x + rng.normal(0.0, noise_sigma, x.shape)
    np.maximum(x, 0.0, out=x)
    return LabeledImage(x, template.label)


def _sample_stream(seed: int, split_index: int, sample_index: int) -> np.random.Generator:
    return np.random.default_rng((int(seed), int(split_index), int(sample_index)))


def gen_dataset(
    sizes=DESK_SIZES,
    seed: int = 0,
    noise_sigma: float = NOISE_SIGMA,
) -> tuple[Dataset, Dataset, Dataset]:
    """Generate (train, valid, test) splits of noisy digits.

    Labels are uniform over 0..9; each sample is an independently corrupted
    copy of its label's template.  A pure function of (sizes, seed,
    noise_sigma).
    """
    if len(sizes) != 3:
        raise DomainError(f"need (train, valid, test) sizes, got {sizes!r}")
    if any(int(n) < 10 for n in sizes):
        raise DomainError(f"each split needs at least 10 samples, got {sizes!r}")
    templates = builtin_templates()
    splits = []
    for split_index, (name, count) in enumerate(zip(("train", "valid", "test"), sizes)):
        count = int(count)
        pixels = np.empty((count, IMAGE_PIXELS))
        labels = np.empty(count, dtype=np.int64)
        for n in range(count):
            rng = _sample_stream(seed, split_index, n)
            label = int(rng.integers(NUM_CLASSES))
            sample = corrupt(templates.image(label), rng, noise_sigma=noise_sigma)
            pixels[n] = sample.pixels
            labels[n] = label
        splits.append(Dataset(pixels, labels, split=name))
    return tuple(splits)


def _sample_dtype(dim: int) -> np.dtype:
    return np.dtype([("label", "u1"), ("pixels", "<f4", (dim,))])


def save_dataset(path, dataset: Dataset) -> None:
    """Write the versioned flat binary cache format (f32 pixels)."""
    records = np.empty(len(dataset), dtype=_sample_dtype(dataset.dim))
    records["label"] = dataset.labels.astype(np.uint8)
    records["pixels"] = dataset.pixels.astype(np.float32)
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<III", DATASET_VERSION, len(dataset), dataset.dim))
        f.write(records.tobytes())


def load_dataset(path, split: str | None = None, num_classes: int = NUM_CLASSES) -> Dataset:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, path)
        if magic != DATASET_MAGIC:
            raise FormatError(f"{path}: bad dataset magic {magic!r}")
        version, count, dim = struct.unpack("<III", _read_exact(f, 12, path))
        if version != DATASET_VERSION:
            raise FormatError(f"{path}: unsupported dataset version {version}")
        dtype = _sample_dtype(dim)
        records = np.frombuffer(_read_exact(f, count * dtype.itemsize, path), dtype=dtype)
    if split is None:
        split = _stem(path)
    return Dataset(
        records["pixels"].astype(np.float64),
        records["label"].astype(np.int64),
        split=split,
        num_classes=num_classes,
    )


def load_idx(images_path, labels_path, num_classes: int = NUM_CLASSES) -> Dataset:
    """Load an IDX image/label file pair (big-endian, MNIST distribution
    layout); raw bytes are scaled to [0, 1]."""
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, images_path))
        if magic != _IDX_IMAGE_MAGIC:
            raise FormatError(f"{images_path}: bad image magic 0x{magic:08x}")
        raw = _read_exact(f, count * rows * cols, images_path)
    with open(labels_path, "rb") as f:
        magic, label_count = struct.unpack(">II", _read_exact(f, 8, labels_path))
        if magic != _IDX_LABEL_MAGIC:
            raise FormatError(f"{labels_path}: bad label magic 0x{magic:08x}")
        raw_labels = _read_exact(f, label_count, labels_path)
    if count != label_count:
        raise ConsistencyError(f"{count} images but {label_count} labels")
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    if labels.size and labels.max() >= num_classes:
        raise ConsistencyError(f"label {labels.max()} out of range for {num_classes} classes")
    pixels = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    return Dataset(pixels.reshape(count, rows * cols), labels,
                   split=_stem(images_path), num_classes=num_classes)


def _read_exact(f, nbytes: int, path) -> bytes:
    data = f.read(nbytes)
    if len(data) != nbytes:
        raise IoError(f"{path}: truncated (wanted {nbytes} bytes, got {len(data)})")
    return data


def _stem(path) -> str:
    name = str(path).replace("\\", "/").rsplit("/", 1)[-1]
    return name.split(".", 1)[0]
