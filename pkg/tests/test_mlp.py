import numpy as np
import pytest

from psa import mlp
from psa.data import Dataset
from psa.errors import (DimensionError, DomainError, FormatError, IoError,
                        TrainingError)
from conftest import toy_blobs


def zero_model(d=6, classes=10):
    return mlp.Mlp([np.zeros((classes, d))], [np.zeros(classes)])


def random_model(layer_sizes, kind, seed, bias_scale=0.3):
    cfg = mlp.MlpConfig(layer_sizes, unit_kind=kind, seed=seed)
    model = mlp.init_mlp(cfg)
    rng = np.random.default_rng(seed + 1)
    for b in model.biases:
        b += rng.normal(0.0, bias_scale, b.shape)
    return model


def fd_gradient(model, x, c, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (mlp.forward_logp(model, xp)[c] - mlp.forward_logp(model, xm)[c]) / (2 * h)
    return g


def test_zero_model_uniform_posterior():
    logp = mlp.forward_logp(zero_model(), np.zeros(6))
    np.testing.assert_allclose(logp, np.full(10, np.log(0.1)), atol=1e-15)


def test_forward_logp_normalized():
    model = random_model((5, 7, 4), "logistic", seed=3)
    rng = np.random.default_rng(0)
    for _ in range(20):
        logp = mlp.forward_logp(model, rng.normal(0, 2, 5))
        assert abs(np.exp(logp).sum() - 1.0) <= 1e-12


def test_single_layer_matches_high_precision_log_softmax():
    # independent oracle in 50-digit arithmetic
    import mpmath

    mpmath.mp.dps = 50
    rng = np.random.default_rng(8)
    w = rng.normal(0, 1, (4, 6))
    b = rng.normal(0, 1, 4)
    model = mlp.Mlp([w.copy()], [b.copy()])
    for _ in range(5):
        x = rng.normal(0, 1, 6)
        z = w @ x + b
        total = mpmath.fsum(mpmath.e**mpmath.mpf(v) for v in z)
        expected = np.array([float(mpmath.mpf(v) - mpmath.log(total)) for v in z])
        np.testing.assert_allclose(mlp.forward_logp(model, x), expected, atol=1e-13)


def test_forward_errors():
    model = zero_model()
    with pytest.raises(DimensionError):
        mlp.forward_logp(model, np.zeros(5))
    with pytest.raises(DomainError):
        mlp.forward_logp(model, np.full(6, np.nan))


def test_train_separable_toy_reaches_zero_error():
    rng = np.random.default_rng(1)
    n = 40
    pixels = np.concatenate([rng.normal(-2.0, 0.3, (n, 2)), rng.normal(2.0, 0.3, (n, 2))])
    labels = np.repeat([0, 1], n)
    ds = Dataset(pixels, labels, split="toy", num_classes=2)
    cfg = mlp.MlpConfig((2, 4, 2), unit_kind="logistic", learning_rate=0.5,
                        epochs=50, batch_size=8, seed=0)
    model, log = mlp.train_sgd(cfg, ds, ds)
    assert any(row.train_error == 0.0 for row in log)
    assert all(np.isfinite(row.train_loss) for row in log)


def test_train_bit_identical_for_fixed_seed():
    ds = toy_blobs(10, dim=4, num_classes=2, seed=2)
    cfg = mlp.MlpConfig((4, 5, 2), learning_rate=0.3, epochs=8, batch_size=5,
                        seed=7, dropout=(0.9, 0.7))
    m1, log1 = mlp.train_sgd(cfg, ds, ds)
    m2, log2 = mlp.train_sgd(cfg, ds, ds)
    for a, b in zip(m1.weights + m1.biases, m2.weights + m2.biases):
        assert a.tobytes() == b.tobytes()
    assert [r.train_loss for r in log1] == [r.train_loss for r in log2]


def test_train_divergence_raises():
    ds = toy_blobs(10, dim=4, num_classes=2, seed=2)
    cfg = mlp.MlpConfig((4, 8, 2), unit_kind="relu", learning_rate=1e12,
                        epochs=3, batch_size=5, seed=0)
    with pytest.raises(TrainingError) as err:
        mlp.train_sgd(cfg, ds, ds)
    assert err.value.epoch is not None


def test_input_gradient_linear_softmax_closed_form():
    rng = np.random.default_rng(5)
    w = rng.normal(0, 1, (4, 7))
    model = mlp.Mlp([w.copy()], [np.zeros(4)])
    x = rng.normal(0, 1, 7)
    p = np.exp(mlp.forward_logp(model, x))
    for c in range(4):
        expected = w[c] - p @ w
        np.testing.assert_allclose(mlp.input_gradient(model, x, c), expected, atol=1e-12)


@pytest.mark.parametrize("kind", ["logistic", "relu"])
def test_input_gradient_matches_finite_differences(kind):
    rng = np.random.default_rng(17)
    for trial in range(10):
        hidden = tuple(int(rng.integers(3, 8)) for _ in range(1 + trial % 3))
        model = random_model((5,) + hidden + (3,), kind, seed=trial)
        x = rng.normal(0, 1, 5)
        c = int(rng.integers(3))
        bp = mlp.input_gradient(model, x, c)
        fd = fd_gradient(model, x, c)
        assert np.max(np.abs(bp - fd)) <= 1e-6 * max(np.max(np.abs(fd)), 1e-12)


def test_input_gradient_zero_model_and_errors():
    model = zero_model()
    np.testing.assert_array_equal(mlp.input_gradient(model, np.ones(6), 4), np.zeros(6))
    with pytest.raises(DomainError):
        mlp.input_gradient(model, np.ones(6), 10)


def test_gradient_field_single_row_and_threads(blob_model, blob_data):
    one = Dataset(blob_data.pixels[:1], blob_data.labels[:1], split="one",
                  num_classes=blob_data.num_classes)
    field = mlp.gradient_field(blob_model, one, 2)
    np.testing.assert_array_equal(
        field.matrix[0], mlp.input_gradient(blob_model, one.pixels[0], 2))

    serial = mlp.gradient_field(blob_model, blob_data, 1, threads=1)
    threaded = mlp.gradient_field(blob_model, blob_data, 1, threads=2)
    assert serial.matrix.tobytes() == threaded.matrix.tobytes()


def test_gradient_field_row_norm_bound(blob_model, blob_data):
    # logistic activations have derivative <= 1/4 and ||e_c - p||_2 <= sqrt(2)
    field = mlp.gradient_field(blob_model, blob_data, 0)
    bound = np.sqrt(2.0) * 0.25 ** (len(blob_model.weights) - 1)
    for w in blob_model.weights:
        bound *= np.linalg.norm(w)
    norms = np.linalg.norm(field.matrix, axis=1)
    assert np.all(np.isfinite(norms))
    assert norms.max() <= bound


def test_inference_ignores_global_rng_state(blob_model):
    x = np.zeros(6)
    np.random.seed(1)
    a = mlp.forward_logp(blob_model, x)
    np.random.seed(999)
    b = mlp.forward_logp(blob_model, x)
    assert a.tobytes() == b.tobytes()


def test_checkpoint_roundtrip_bit_exact(tmp_path, blob_model):
    path = tmp_path / "model.psam"
    mlp.save_model(path, blob_model)
    back = mlp.load_model(path)
    assert back.unit_kind == blob_model.unit_kind
    for a, b in zip(blob_model.weights + blob_model.biases, back.weights + back.biases):
        assert a.tobytes() == b.tobytes()
    path2 = tmp_path / "again.psam"
    mlp.save_model(path2, back)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_errors(tmp_path, blob_model):
    bad = tmp_path / "bad.psam"
    bad.write_bytes(b"XXXX" + b"\0" * 32)
    with pytest.raises(FormatError):
        mlp.load_model(bad)
    good = tmp_path / "good.psam"
    mlp.save_model(good, blob_model)
    trunc = tmp_path / "trunc.psam"
    trunc.write_bytes(good.read_bytes()[:-12])
    with pytest.raises(IoError):
        mlp.load_model(trunc)


def test_config_validation():
    with pytest.raises(DomainError):
        mlp.MlpConfig((4,))
    with pytest.raises(DomainError):
        mlp.MlpConfig((4, 2), unit_kind="tanh")
    with pytest.raises(DomainError):
        mlp.MlpConfig((4, 2), dropout=(0.0, 0.5))
    with pytest.raises(DomainError):
        mlp.MlpConfig((4, 2), learning_rate=0.0)
