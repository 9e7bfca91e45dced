import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from normforge.errors import ConfigError, DimensionError
from normforge.models import (
    MLP, Batch, DatasetSpec, ModelSpec, backward, finite_diff_check, forward_loss,
    load_dataset, make_dataset, merge_batches, save_dataset,
)
from normforge.presets import AdamState, adam_step
from normforge.tree import ParamTree

# recorded once from this implementation; guards against silent changes
GOLDEN_BLOB_LOSS = 0.9226749873909212


def test_zero_net_softmax_is_log_k():
    model = MLP(ModelSpec((4, 5, 3), loss="softmax_xent"))
    params = model.init_params().zeros_like()
    batch = Batch(np.random.default_rng(0).standard_normal((6, 4)), np.array([0, 1, 2, 0, 1, 2]))
    assert forward_loss(model, params, batch) == pytest.approx(np.log(3))


def test_mse_zero_at_targets():
    model = MLP(ModelSpec((3, 4, 2)))
    params = model.init_params()
    X = np.random.default_rng(1).standard_normal((5, 3))
    batch = Batch(X, model.forward(params, X)[0])
    assert forward_loss(model, params, batch) == 0.0


def test_golden_loss():
    spec = ModelSpec((8, 16, 3), loss="softmax_xent", seed=7)
    batch = make_dataset(DatasetSpec(kind="gaussian_blobs", size=32, seed=42, n_features=8, n_outputs=3))[0]
    model = MLP(spec)
    assert forward_loss(model, model.init_params(), batch) == pytest.approx(GOLDEN_BLOB_LOSS, rel=1e-12)


def test_linear_mse_gradient_closed_form():
    model = MLP(ModelSpec((3, 2)))
    params = model.init_params()
    x, y = np.array([[1.0, -2.0, 0.5]]), np.array([[0.3, -0.7]])
    loss, grads = backward(model, params, Batch(x, y))
    pred = model.forward(params, x)[0]
    assert loss == pytest.approx(forward_loss(model, params, Batch(x, y)))
    assert np.allclose(grads.matrices[0], 2 * np.outer(pred - y, x))
    assert np.allclose(grads.base, 2 * (pred - y).ravel())


def test_linear_model_fd_is_tight():
    model = MLP(ModelSpec((4, 3), seed=3))
    batch = make_dataset(DatasetSpec(size=10, n_features=4, n_outputs=3))[0]
    assert finite_diff_check(model, model.init_params(), batch) <= 1e-7


def test_stationary_point_has_tiny_gradient():
    # an overparameterized linear fit solved exactly
    rng = np.random.default_rng(0)
    X, Y = rng.standard_normal((3, 5)), rng.standard_normal((3, 2))
    model = MLP(ModelSpec((5, 2)))
    W = np.linalg.lstsq(X, Y, rcond=None)[0].T
    _, g = backward(model, ParamTree([W], np.zeros(2)), Batch(X, Y))
    assert np.linalg.norm(g.flat()) <= 1e-8


@pytest.mark.parametrize("activation", ["tanh", "relu"])
@pytest.mark.parametrize("loss", ["mse", "softmax_xent"])
@pytest.mark.parametrize("gain", [False, True])
def test_finite_differences(activation, loss, gain):
    model = MLP(ModelSpec((6, 9, 7, 4), activation=activation, loss=loss, seed=2, input_gain=gain))
    kind = "teacher_net" if loss == "mse" else "gaussian_blobs"
    batch = make_dataset(DatasetSpec(kind=kind, size=10, noise=0.1, n_features=6, n_outputs=4))[0]
    assert finite_diff_check(model, model.init_params(), batch, h=1e-5) <= 1e-4


def test_finite_diff_rejects_bad_step():
    model = MLP(ModelSpec((2, 2)))
    with pytest.raises(ValueError):
        finite_diff_check(model, model.init_params(), Batch(np.ones((1, 2)), np.ones((1, 2))), h=0.0)


def test_shape_errors():
    model = MLP(ModelSpec((3, 4, 2)))
    with pytest.raises(DimensionError):
        forward_loss(model, ParamTree([np.ones((4, 3))], np.zeros(6)), Batch(np.ones((1, 3)), np.ones((1, 2))))
    with pytest.raises(ConfigError):
        ModelSpec((3,))
    with pytest.raises(ConfigError):
        ModelSpec((3, 2), activation="gelu")


def test_matrices_and_base_split():
    model = MLP(ModelSpec((5, 8, 3), input_gain=True))
    p = model.init_params()
    assert p.shapes == [(8, 5), (3, 8), (8 + 3 + 5,)]
    assert np.all(p.base[-5:] == 1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), loss=st.sampled_from(["mse", "softmax_xent"]))
def test_losses_nonnegative(seed, loss):
    model = MLP(ModelSpec((4, 6, 3), loss=loss, seed=seed))
    kind = "teacher_net" if loss == "mse" else "char_copy"
    batch = make_dataset(DatasetSpec(kind=kind, size=8, seed=seed, n_features=6 if kind == "char_copy" else 4,
                                     n_outputs=3))[0]
    if kind == "char_copy":
        model = MLP(ModelSpec((6, 6, 3), loss=loss, seed=seed))
    assert forward_loss(model, model.init_params(), batch) >= 0.0


# --- data


@pytest.mark.parametrize("kind", ["teacher_net", "gaussian_blobs", "char_copy"])
def test_dataset_deterministic(kind):
    spec = DatasetSpec(kind=kind, size=40, noise=0.1, seed=5)
    a, b = make_dataset(spec)[0], make_dataset(spec)[0]
    assert a.inputs.tobytes() == b.inputs.tobytes()
    assert a.targets.tobytes() == b.targets.tobytes()
    other = make_dataset(DatasetSpec(kind=kind, size=40, noise=0.1, seed=6))[0]
    assert other.inputs.tobytes() != a.inputs.tobytes()


def test_batches_partition_the_data():
    spec = DatasetSpec(size=50)
    parts = make_dataset(spec, batch_size=16)
    assert [len(b) for b in parts] == [16, 16, 16, 2]
    assert np.array_equal(merge_batches(parts).inputs, make_dataset(spec)[0].inputs)


def test_char_copy_targets_are_first_character():
    b = make_dataset(DatasetSpec(kind="char_copy", size=30, n_features=12, n_outputs=4))[0]
    assert np.array_equal(np.argmax(b.inputs[:, :4], axis=1), b.targets)
    assert np.all(b.inputs.sum(axis=1) == 3)


def test_dataset_validation():
    with pytest.raises(ConfigError):
        DatasetSpec(kind="mnist")
    with pytest.raises(ConfigError):
        DatasetSpec(size=0)
    with pytest.raises(ConfigError):
        DatasetSpec(noise=-1)


def test_noiseless_teacher_is_learnable():
    spec = DatasetSpec(size=128, noise=0.0, seed=1, n_features=4, n_outputs=2, teacher_hidden=8)
    batch = make_dataset(spec)[0]
    model = MLP(ModelSpec((4, 32, 2), seed=0))
    p = model.init_params()
    flat, st_ = p.flat(), AdamState()
    for t in range(3000):
        lr = 0.01 if t < 2000 else 0.002
        _, g = model.loss_and_grad(p.unflatten(flat), batch)
        adam_step(flat, g.flat(), st_, lr, 0.9, 0.999, 1e-8)
    assert model.loss(p.unflatten(flat), batch) <= 1e-3


def test_separated_blobs_are_linearly_separable():
    spec = DatasetSpec(kind="gaussian_blobs", size=200, separation=10.0, n_features=5, n_outputs=2)
    batch = make_dataset(spec)[0]
    model = MLP(ModelSpec((5, 2), loss="softmax_xent"))
    p = model.init_params()
    for _ in range(200):
        _, g = model.loss_and_grad(p, batch)
        p.add_(g, -0.5)
    acc = np.mean(np.argmax(model.forward(p, batch.inputs)[0], axis=1) == batch.targets)
    assert acc >= 0.99


def test_cache_roundtrip(tmp_path):
    for kind in ("teacher_net", "gaussian_blobs"):
        spec = DatasetSpec(kind=kind, size=17, seed=3)
        batch = make_dataset(spec)[0]
        path = tmp_path / f"{kind}.bin"
        save_dataset(path, spec, batch)
        back = load_dataset(path, spec)
        assert np.array_equal(back.inputs, batch.inputs)
        assert np.array_equal(back.targets, batch.targets)
        assert back.targets.dtype == batch.targets.dtype


def test_cache_rejects_foreign_files(tmp_path):
    spec = DatasetSpec(size=5)
    path = tmp_path / "d.bin"
    save_dataset(path, spec, make_dataset(spec)[0])
    with pytest.raises(ValueError, match="different dataset spec"):
        load_dataset(path, DatasetSpec(size=5, seed=1))
    raw = path.read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(ValueError, match="not a dataset"):
        load_dataset(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="payload"):
        load_dataset(tmp_path / "short.bin")
