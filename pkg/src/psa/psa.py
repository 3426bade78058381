"""Sensitivity kernels and their eigen-analysis.

The kernel of a classifier output f_c under an empirical distribution is the
uncentered second moment of the input-gradient field, K = mean_n r_n r_n^T.
Its diagonal is the standard per-feature sensitivity map; its quadratic form
v^T K v is the sensitivity in direction v; its eigenvectors, ordered by
eigenvalue, are the principal sensitivity maps.  Pairwise variants restrict
the empirical distribution to the samples of two classes and measure how
useful a direction is for telling those classes apart.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .data import Dataset
from .errors import DimensionError, DomainError, FormatError, IoError
from .mlp import GradientField, Mlp, gradient_field

KERNEL_MAGIC = b"PSAK"
EIG_MAGIC = b"PSAE"
SERIAL_VERSION = 1

UNIT_NORM_TOL = 1e-9


@dataclass
class SensitivityKernel:
    """d x d symmetric PSD matrix of expected products of partial derivatives.

    `support` records the empirical distribution the expectation ran over
    (a split tag, optionally restricted to a class pair).
    """

    matrix: np.ndarray = field(repr=False)
    class_index: int = 0
    support: str = "unknown"

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        n, m = self.matrix.shape if self.matrix.ndim == 2 else (0, -1)
        if n != m or n == 0:
            raise DimensionError(f"kernel must be square, got {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise DomainError("kernel has non-finite entries")
        if n > 1 and np.max(np.abs(self.matrix - self.matrix.T)) > 1e-12:
            raise DomainError("kernel asymmetry exceeds 1e-12")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass
class PsaDecomposition:
    """Eigenvalues (descending) and eigenvector columns of a kernel.

    Column k of `eigenvectors` is the k-th principal sensitivity map; column
    0 is THE principal sensitivity map (sign fixed by the eigensolver's
    largest-entry convention).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    class_index: int = 0
    support: str = "unknown"

    @property
    def principal_map(self) -> np.ndarray:
        return self.eigenvectors[:, 0]

    @property
    def dim(self) -> int:
        return self.eigenvectors.shape[0]


@dataclass
class PairwiseTable:
    """Entries s_{c,c'}(v_k) keyed by (c, c_prime, k) with k 1-based."""

    entries: dict
    model_id: str = ""
    dataset_id: str = ""

    def value(self, c: int, c_prime: int, k: int) -> float:
        return self.entries[(c, c_prime, k)]


def kernel_from_gradients(gradients: GradientField) -> SensitivityKernel:
    """Uncentered covariance of the gradient rows, K = (1/N) sum_n r_n r_n^T.

    The accumulated matrix is symmetrized exactly (elementwise averaging with
    its transpose commutes bitwise), so the symmetry invariant holds with
    zero tolerance.
    """
    n = len(gradients)
    if n < 1:
        raise DomainError("gradient field is empty")
    k = gradients.matrix.T @ gradients.matrix / n
    k = (k + k.T) / 2.0
    return SensitivityKernel(k, gradients.class_index, gradients.dataset_tag)


def standard_map(kernel: SensitivityKernel) -> np.ndarray:
    """Per-feature sensitivities: the kernel diagonal."""
    return np.diag(kernel.matrix).copy()


def directional_sensitivity(kernel: SensitivityKernel, v, normalize: bool = False) -> float:
    """Sensitivity v^T K v in unit direction v (non-negative).

    With normalize=False, v must already be unit length to within 1e-9;
    with normalize=True it is normalized first (zero vectors are rejected).
    """
    v = linalg.as_vector(v)
    if v.shape[0] != kernel.dim:
        raise DimensionError(f"direction length {v.shape[0]} vs kernel dim {kernel.dim}")
    if not np.all(np.isfinite(v)):
        raise DomainError("non-finite direction")
    norm = np.linalg.norm(v)
    if normalize:
        if norm == 0.0:
            raise DomainError("cannot normalize the zero direction")
        v = v / norm
    elif abs(norm - 1.0) > UNIT_NORM_TOL:
        raise DomainError(f"direction norm {norm!r} is not 1 within {UNIT_NORM_TOL}")
    value = float(v @ kernel.matrix @ v)
    return value if value > 0.0 else 0.0


def psa(kernel: SensitivityKernel) -> PsaDecomposition:
    """Full eigendecomposition of the kernel; column k = k-th principal map."""
    vals, vecs = linalg.eigh_symmetric(kernel.matrix)
    return PsaDecomposition(vals, vecs, kernel.class_index, kernel.support)


def pairwise_kernel(model: Mlp, dataset: Dataset, c: int, c_prime: int,
                    threads: int = 1) -> SensitivityKernel:
    """Kernel of f_c over the samples labeled c or c_prime only."""
    subset = dataset.restrict_to({c, c_prime})
    rows = gradient_field(model, subset, c, threads=threads)
    kernel = kernel_from_gradients(rows)
    kernel.support = f"{dataset.split}|classes={{{c},{c_prime}}}"
    return kernel


def pairwise_sensitivity(model: Mlp, dataset: Dataset, c: int, c_prime: int,
                         v, normalize: bool = False) -> float:
    """Sensitivity of f_c in direction v over the {c, c_prime} slice."""
    return directional_sensitivity(pairwise_kernel(model, dataset, c, c_prime), v,
                                   normalize=normalize)


def pairwise_table(model: Mlp, dataset: Dataset, classes, k_max: int,
                   threads: int = 1) -> PairwiseTable:
    """s_{c,c'}(v_k) for each listed c, every other class c', and k <= k_max.

    v_k are the principal maps of f_c's kernel over the FULL dataset; each
    entry evaluates that fixed basis against the {c, c'} pair kernel.
    """
    if k_max < 1 or k_max > dataset.dim:
        raise DomainError(f"k_max must be in 1..{dataset.dim}, got {k_max}")
    entries = {}
    for c in classes:
        rows = gradient_field(model, dataset, c, threads=threads)
        maps = psa(kernel_from_gradients(rows)).eigenvectors[:, :k_max]
        for c_prime in range(dataset.num_classes):
            if c_prime == c:
                continue
            mask = (dataset.labels == c) | (dataset.labels == c_prime)
            pair = kernel_from_gradients(
                GradientField(rows.matrix[mask], c, dataset.split)
            )
            values = np.sum(maps * (pair.matrix @ maps), axis=0)
            np.maximum(values, 0.0, out=values)
            for k in range(k_max):
                entries[(c, c_prime, k + 1)] = float(values[k])
    return PairwiseTable(entries, model_id="", dataset_id=dataset.split)


# ---------------------------------------------------------------------------
# serialization

def write_pairwise_csv(path, table: PairwiseTable) -> None:
    """CSV with header c,c_prime,k,value; 17 significant digits."""
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write("c,c_prime,k,value\n")
        for (c, c_prime, k) in sorted(table.entries):
            f.write(f"{c},{c_prime},{k},{table.entries[(c, c_prime, k)]:.17g}\n")


def read_pairwise_csv(path) -> PairwiseTable:
    entries = {}
    with open(path, "r", encoding="ascii") as f:
        header = f.readline().strip()
        if header != "c,c_prime,k,value":
            raise FormatError(f"{path}: bad pairwise CSV header {header!r}")
        for line in f:
            line = line.strip()
            if not line:
                continue
            c, c_prime, k, value = line.split(",")
            entries[(int(c), int(c_prime), int(k))] = float(value)
    return PairwiseTable(entries)


def _write_tagged(f, class_index: int, support: str):
    blob = support.encode("utf-8")
    f.write(struct.pack("<Iih", SERIAL_VERSION, class_index, len(blob)))
    f.write(blob)


def _read_tagged(f, path):
    version, class_index, blob_len = struct.unpack("<Iih", _read_exact(f, 10, path))
    if version != SERIAL_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    support = _read_exact(f, blob_len, path).decode("utf-8")
    return class_index, support


def save_kernel(path, kernel: SensitivityKernel) -> None:
    with open(path, "wb") as f:
        f.write(KERNEL_MAGIC)
        _write_tagged(f, kernel.class_index, kernel.support)
        f.write(struct.pack("<I", kernel.dim))
        f.write(np.ascontiguousarray(kernel.matrix, dtype="<f8").tobytes())


def load_kernel(path) -> SensitivityKernel:
    with open(path, "rb") as f:
        if _read_exact(f, 4, path) != KERNEL_MAGIC:
            raise FormatError(f"{path}: bad kernel magic")
        class_index, support = _read_tagged(f, path)
        (dim,) = struct.unpack("<I", _read_exact(f, 4, path))
        data = np.frombuffer(_read_exact(f, 8 * dim * dim, path), dtype="<f8")
    return SensitivityKernel(data.reshape(dim, dim).copy(), class_index, support)


def save_decomposition(path, decomposition: PsaDecomposition) -> None:
    with open(path, "wb") as f:
        f.write(EIG_MAGIC)
        _write_tagged(f, decomposition.class_index, decomposition.support)
        f.write(struct.pack("<I", decomposition.dim))
        f.write(np.ascontiguousarray(decomposition.eigenvalues, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(decomposition.eigenvectors, dtype="<f8").tobytes())


def load_decomposition(path) -> PsaDecomposition:
    with open(path, "rb") as f:
        if _read_exact(f, 4, path) != EIG_MAGIC:
            raise FormatError(f"{path}: bad decomposition magic")
        class_index, support = _read_tagged(f, path)
        (dim,) = struct.unpack("<I", _read_exact(f, 4, path))
        vals = np.frombuffer(_read_exact(f, 8 * dim, path), dtype="<f8").copy()
        vecs = np.frombuffer(_read_exact(f, 8 * dim * dim, path), dtype="<f8")
    return PsaDecomposition(vals, vecs.reshape(dim, dim).copy(), class_index, support)


def _read_exact(f, nbytes, path):
    data = f.read(nbytes)
    if len(data) != nbytes:
        raise IoError(f"{path}: truncated (wanted {nbytes} bytes, got {len(data)})")
    return data
