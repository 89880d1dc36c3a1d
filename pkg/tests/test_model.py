import numpy as np
import pytest

from sigclr.kernel import finite_diff_grad, matmul, max_rel_error
from sigclr.losses import LossParams, build_masks, sigclr_loss
from sigclr.model import (
    CheckpointError,
    LayerSpec,
    Model,
    ModelSpec,
    ModelStateError,
    init_params,
    load_checkpoint,
    save_checkpoint,
)


def small_spec():
    return ModelSpec(input_dim=5, encoder_widths=(6, 4), projector_widths=(8, 8, 3))


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        LayerSpec(0, 3)
    with pytest.raises(ValueError):
        LayerSpec(2, 3, "tanh")


def test_default_projector_shape():
    spec = ModelSpec(input_dim=512)
    proj = spec.layers()["projector"]
    assert [(l.in_dim, l.out_dim, l.activation) for l in proj] == [
        (256, 1024, "relu"), (1024, 1024, "relu"), (1024, 128, "linear")]
    assert ModelSpec(512, width_factor=0.125).embedding_dim == 16


def test_init_deterministic_and_bounded():
    a = init_params(small_spec(), 3, np.float64)
    b = init_params(small_spec(), 3, np.float64)
    c = init_params(small_spec(), 4, np.float64)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a if k.endswith("weight"))
    for k, w in a.items():
        if k.endswith("weight"):
            assert np.abs(w).max() <= np.sqrt(6.0 / sum(w.shape))
        else:
            assert not w.any()


def test_zero_weights_give_zero_outputs():
    model = Model.create(small_spec(), 0, np.float64)
    for k in model.params:
        model.params[k] = np.zeros_like(model.params[k])
    h, z = model.forward(np.random.default_rng(0).normal(size=(3, 5)))
    assert not h.any() and not z.any()


def test_single_linear_layer_is_matmul_plus_bias(rng):
    spec = ModelSpec(input_dim=4, encoder_widths=(), projector_widths=(3,))
    model = Model.create(spec, 0, np.float64)
    model.params["projector.0.bias"] = rng.normal(size=3)
    x = rng.normal(size=(5, 4))
    _, z = model.forward(x)
    assert np.array_equal(z, matmul(x, model.params["projector.0.weight"]) + model.params["projector.0.bias"])


def test_relu_layer():
    spec = ModelSpec(input_dim=2, encoder_widths=(2,), projector_widths=(1,))
    model = Model.create(spec, 0, np.float64)
    model.params["encoder.0.weight"] = np.eye(2)
    h, _ = model.forward(np.array([[-1.0, 2.0]]))
    assert np.array_equal(h, [[0.0, 2.0]])


def test_backward_requires_forward():
    model = Model.create(small_spec(), 0)
    with pytest.raises(ModelStateError):
        model.backward(np.zeros((2, 3)))


def test_zero_upstream_gives_zero_grads(rng):
    model = Model.create(small_spec(), 0, np.float64)
    _, z = model.forward(rng.normal(size=(4, 5)))
    grads = model.backward(np.zeros_like(z))
    assert set(grads) == set(model.params)
    assert all(not g.any() for g in grads.values())


def test_linear_weight_grad_closed_form(rng):
    spec = ModelSpec(input_dim=4, encoder_widths=(), projector_widths=(3,))
    model = Model.create(spec, 0, np.float64)
    x = rng.normal(size=(6, 4))
    up = rng.normal(size=(6, 3))
    model.forward(x)
    grads = model.backward(up)
    assert np.array_equal(grads["projector.0.weight"], matmul(x.T, up))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_end_to_end_grad_matches_fd(seed):
    rng = np.random.default_rng(seed)
    model = Model.create(ModelSpec(input_dim=5, encoder_widths=(7,), projector_widths=(6, 4)), seed, np.float64)
    for k in model.params:
        if k.endswith(".bias"):
            model.params[k] = rng.normal(scale=0.1, size=model.params[k].shape)
    x = rng.normal(size=(6, 5))
    masks, p = build_masks(3), LossParams(temperature=5.0, bias=-2.0)
    _, z = model.forward(x)
    grads = model.backward(sigclr_loss(z, masks, p).grad_embeddings)
    for name, g in grads.items():
        def f(w, name=name):
            saved = model.params[name]
            model.params[name] = w.reshape(saved.shape)
            try:
                return sigclr_loss(model.forward(x)[1], masks, p).value
            finally:
                model.params[name] = saved
        fd = finite_diff_grad(f, model.params[name].reshape(g.shape))
        assert max_rel_error(g, fd) < 1e-5, name


def test_encode_does_not_disturb_cache(rng):
    model = Model.create(small_spec(), 0, np.float64)
    x = rng.normal(size=(4, 5))
    h, z = model.forward(x)
    assert np.array_equal(model.encode(x), h)
    model.backward(np.ones_like(z))


def test_checkpoint_roundtrip(tmp_path):
    tensors = init_params(small_spec(), 1)
    tensors["loss.bias"] = np.array(-10.0, dtype=np.float32)
    path = tmp_path / "c.sgcl"
    save_checkpoint(path, tensors)
    raw = path.read_bytes()
    assert raw[:4] == b"SGCL" and raw[4] == 1
    back = load_checkpoint(path)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].tobytes() == tensors[k].astype("<f4").tobytes()
        assert back[k].shape == tensors[k].shape
    save_checkpoint(tmp_path / "d.sgcl", back)
    assert (tmp_path / "d.sgcl").read_bytes() == raw


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "c.sgcl"
    save_checkpoint(path, {"w": np.ones((3, 3), np.float32)})
    raw = path.read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad")
    (tmp_path / "short").write_bytes(raw[:-5])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "short")
