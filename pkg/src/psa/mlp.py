"""Feed-forward classifiers with exact input gradients of class log-posteriors.

Training is plain mini-batch SGD on the mean negative log-posterior, with
optional inverted dropout.  All randomness (init, shuffling, dropout masks)
derives from the config seed, so a fixed config reproduces the final
parameters bit for bit.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import DimensionError, DomainError, FormatError, IoError, TrainingError

UNIT_LOGISTIC = "logistic"
UNIT_RELU = "relu"
_UNIT_CODES = {UNIT_LOGISTIC: 0, UNIT_RELU: 1}

MODEL_MAGIC = b"PSAM"
MODEL_VERSION = 1

# keep probabilities when dropout is enabled without explicit rates
DEFAULT_DROPOUT = (0.8, 0.5)

_EVAL_CHUNK = 2048


@dataclass
class MlpConfig:
    """Architecture plus every knob SGD training consumes."""

    layer_sizes: tuple
    unit_kind: str = UNIT_LOGISTIC
    dropout: tuple | None = None  # (input_keep, hidden_keep) or None
    learning_rate: float = 0.1
    epochs: int = 50
    batch_size: int = 100
    seed: int = 0

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if len(self.layer_sizes) < 2 or any(n < 1 for n in self.layer_sizes):
            raise DomainError(f"bad layer sizes {self.layer_sizes}")
        if self.unit_kind not in _UNIT_CODES:
            raise DomainError(f"unknown unit kind {self.unit_kind!r}")
        if self.dropout is not None:
            keep_in, keep_hidden = self.dropout
            if not (0.0 < keep_in <= 1.0 and 0.0 < keep_hidden <= 1.0):
                raise DomainError(f"keep probabilities must be in (0, 1], got {self.dropout}")
            self.dropout = (float(keep_in), float(keep_hidden))
        if self.learning_rate <= 0.0:
            raise DomainError("learning rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise DomainError("epochs and batch size must be at least 1")


@dataclass
class Mlp:
    """Layered parameters; weights[l] has shape (out, in)."""

    weights: list = field(repr=False)
    biases: list = field(repr=False)
    unit_kind: str = UNIT_LOGISTIC

    def __post_init__(self):
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionError(f"layer {l}: weights {w.shape} vs biases {b.shape}")
            if l and w.shape[1] != self.weights[l - 1].shape[0]:
                raise DimensionError(f"layer {l} input {w.shape[1]} does not match previous out")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise DomainError(f"layer {l} has non-finite parameters")

    @property
    def num_inputs(self) -> int:
        return self.weights[0].shape[1]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_sizes(self) -> tuple:
        return (self.num_inputs,) + tuple(w.shape[0] for w in self.weights)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_error: float
    valid_error: float


@dataclass
class GradientField:
    """Per-sample input gradients of one class log-posterior, stacked N x d."""

    matrix: np.ndarray = field(repr=False)
    class_index: int = 0
    dataset_tag: str = "unknown"

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise DimensionError(f"gradient field must be 2-D, got {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise DomainError("gradient field has non-finite entries")

    def __len__(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[np.logical_not(pos)])
    out[np.logical_not(pos)] = ez / (1.0 + ez)
    return out


def _activation(z, kind):
    if kind == UNIT_LOGISTIC:
        return _sigmoid(z)
    return np.maximum(z, 0.0)


def _activation_grad(z, h, kind):
    # h is the unmasked activation for the same pre-activation z
    if kind == UNIT_LOGISTIC:
        return h * (1.0 - h)
    return (z > 0.0).astype(np.float64)


def _log_softmax(z):
    m = np.max(z, axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.sum(np.exp(s), axis=-1, keepdims=True))


def init_mlp(config: MlpConfig) -> Mlp:
    """Seeded uniform init in +-sqrt(6/(fan_in+fan_out)); zero biases."""
    rng = np.random.default_rng((config.seed, 0))
    weights, biases = [], []
    for fan_in, fan_out in zip(config.layer_sizes[:-1], config.layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases, config.unit_kind)


def forward_logp(model: Mlp, x) -> np.ndarray:
    """Class log-posteriors log P(Y=c|x) for one input (log-softmax output)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.num_inputs,):
        raise DimensionError(f"input shape {x.shape}, model expects ({model.num_inputs},)")
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite input")
    return _log_softmax(_forward_batch(model, x[None, :])[0])


def forward_logp_batch(model: Mlp, X) -> np.ndarray:
    """Row-wise log-posteriors for an (N, d) batch."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.num_inputs:
        raise DimensionError(f"batch shape {X.shape}, model expects (N, {model.num_inputs})")
    out = np.empty((X.shape[0], model.num_classes))
    for start in range(0, X.shape[0], _EVAL_CHUNK):
        chunk = X[start : start + _EVAL_CHUNK]
        out[start : start + _EVAL_CHUNK] = _log_softmax(_forward_batch(model, chunk))
    return out


def _forward_batch(model, X):
    a = X
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        a = _activation(z, model.unit_kind) if l < last else z
    return a


def error_rate(model: Mlp, dataset: Dataset) -> float:
    """Fraction of samples whose argmax class disagrees with the label."""
    logp = forward_logp_batch(model, dataset.pixels)
    return float(np.mean(np.argmax(logp, axis=1) != dataset.labels))


def _mean_nll(model, dataset):
    logp = forward_logp_batch(model, dataset.pixels)
    return float(-np.mean(logp[np.arange(len(dataset)), dataset.labels]))


def train_sgd(config: MlpConfig, train: Dataset, valid: Dataset):
    """Mini-batch SGD on the mean negative log-posterior of the true class.

    Shuffles each epoch from the config seed; dropout (when enabled) is
    inverted dropout applied at train time only.  Returns the trained model
    and a list of per-epoch EpochStats.  Raises TrainingError (carrying the
    epoch index) if the training loss leaves the reals.
    """
    if config.layer_sizes[0] != train.dim:
        raise DimensionError(
            f"model expects {config.layer_sizes[0]} inputs, dataset has {train.dim}"
        )
    if config.layer_sizes[-1] < train.num_classes:
        raise DimensionError("output layer smaller than the number of classes")
    model = init_mlp(config)
    shuffle_rng = np.random.default_rng((config.seed, 1))
    dropout_rng = np.random.default_rng((config.seed, 2))
    log = []
    n = len(train)
    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            _sgd_step(model, train.pixels[idx], train.labels[idx],
                      config.learning_rate, config.dropout, dropout_rng)
        train_loss = _mean_nll(model, train)
        if not np.isfinite(train_loss):
            raise TrainingError(f"training loss diverged at epoch {epoch}", epoch=epoch)
        log.append(EpochStats(epoch, train_loss,
                              error_rate(model, train), error_rate(model, valid)))
    return model, log


def _sgd_step(model, X, y, lr, dropout, rng):
    num_layers = len(model.weights)
    masks = [None] * num_layers  # dropout mask on the input of each layer
    a = X
    if dropout is not None:
        masks[0] = (rng.random(a.shape) < dropout[0]) / dropout[0]
        a = a * masks[0]
    inputs = [a]     # (masked) input consumed by each layer
    pre = []
    raw = []         # unmasked hidden activations, for the derivative
    for l in range(num_layers):
        z = inputs[l] @ model.weights[l].T + model.biases[l]
        pre.append(z)
        if l < num_layers - 1:
            h = _activation(z, model.unit_kind)
            raw.append(h)
            if dropout is not None:
                masks[l + 1] = (rng.random(h.shape) < dropout[1]) / dropout[1]
                h = h * masks[l + 1]
            inputs.append(h)
    logp = _log_softmax(pre[-1])
    batch = X.shape[0]
    dz = np.exp(logp)
    dz[np.arange(batch), y] -= 1.0
    dz /= batch
    for l in range(num_layers - 1, -1, -1):
        grad_w = dz.T @ inputs[l]
        grad_b = dz.sum(axis=0)
        if l > 0:
            da = dz @ model.weights[l]
            if masks[l] is not None:
                da = da * masks[l]
            dz = da * _activation_grad(pre[l - 1], raw[l - 1], model.unit_kind)
        model.weights[l] -= lr * grad_w
        model.biases[l] -= lr * grad_b


def input_gradient(model: Mlp, x, class_index: int) -> np.ndarray:
    """Exact gradient of log P(Y=class_index|x) with respect to x.

    Reverse-mode through the log-softmax and every layer; dropout is never
    applied here.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.num_inputs,):
        raise DimensionError(f"input shape {x.shape}, model expects ({model.num_inputs},)")
    if not (0 <= class_index < model.num_classes):
        raise DomainError(f"class {class_index} out of range 0..{model.num_classes - 1}")
    num_layers = len(model.weights)
    pre = []
    hidden = []
    a = x
    for l in range(num_layers):
        z = model.weights[l] @ a + model.biases[l]
        pre.append(z)
        if l < num_layers - 1:
            a = _activation(z, model.unit_kind)
            hidden.append(a)
    logp = _log_softmax(pre[-1])
    delta = -np.exp(logp)
    delta[class_index] += 1.0  # d logp_c / d z_L = e_c - softmax(z_L)
    for l in range(num_layers - 1, 0, -1):
        da = model.weights[l].T @ delta
        delta = da * _activation_grad(pre[l - 1], hidden[l - 1], model.unit_kind)
    return model.weights[0].T @ delta


def gradient_field(model: Mlp, dataset: Dataset, class_index: int,
                   threads: int = 1) -> GradientField:
    """input_gradient stacked over a dataset, row n for sample n.

    With threads > 1 the rows are computed in parallel chunks; every row is
    produced by the same per-sample code path, so the result is bit-identical
    to the single-threaded one.
    """
    if dataset.dim != model.num_inputs:
        raise DimensionError(f"dataset dim {dataset.dim} vs model {model.num_inputs}")
    rows = np.empty((len(dataset), dataset.dim))

    def fill(lo, hi):
        for n in range(lo, hi):
            rows[n] = input_gradient(model, dataset.pixels[n], class_index)

    if threads <= 1:
        fill(0, len(dataset))
    else:
        bounds = np.linspace(0, len(dataset), threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            jobs = [pool.submit(fill, lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]
            for job in jobs:
                job.result()
    return GradientField(rows, class_index, dataset.split)


def save_model(path, model: Mlp) -> None:
    """Checkpoint: magic, version, unit kind, then per-layer dims + f64 data."""
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<IBI", MODEL_VERSION, _UNIT_CODES[model.unit_kind],
                            len(model.weights)))
        for w, b in zip(model.weights, model.biases):
            out_dim, in_dim = w.shape
            f.write(struct.pack("<II", out_dim, in_dim))
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path) -> Mlp:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, path)
        if magic != MODEL_MAGIC:
            raise FormatError(f"{path}: bad model magic {magic!r}")
        version, unit_code, num_layers = struct.unpack("<IBI", _read_exact(f, 9, path))
        if version != MODEL_VERSION:
            raise FormatError(f"{path}: unsupported model version {version}")
        kinds = {code: kind for kind, code in _UNIT_CODES.items()}
        if unit_code not in kinds:
            raise FormatError(f"{path}: unknown unit kind code {unit_code}")
        weights, biases = [], []
        for _ in range(num_layers):
            out_dim, in_dim = struct.unpack("<II", _read_exact(f, 8, path))
            w = np.frombuffer(_read_exact(f, 8 * out_dim * in_dim, path), dtype="<f8")
            b = np.frombuffer(_read_exact(f, 8 * out_dim, path), dtype="<f8")
            weights.append(w.reshape(out_dim, in_dim).copy())
            biases.append(b.copy())
    return Mlp(weights, biases, kinds[unit_code])


def _read_exact(f, nbytes, path):
    data = f.read(nbytes)
    if len(data) != nbytes:
        raise IoError(f"{path}: truncated (wanted {nbytes} bytes, got {len(data)})")
    return data
