import numpy as np
import pytest

from gridguard.errors import ShapeMismatch
from gridguard.numeric import (ACTIVATIONS, Adam, Dense, adam_step, bce_loss, grad_check, load_checkpoint,
                               mse_loss, relu, save_checkpoint, sigmoid, tanh)


def test_known_activation_values():
    assert sigmoid(0.0) == 0.5
    assert tanh(0.0) == 0.0
    assert relu(-1.0) == 0.0


@pytest.mark.parametrize("name", ["sigmoid", "tanh", "relu", "linear"])
def test_activation_gradients(name):
    f, fb = ACTIVATIONS[name]
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 5))
    if name == "relu":
        x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
    w = rng.normal(size=x.shape)
    params = {"x": x}
    grads = {"x": fb(x, w)}
    assert grad_check(lambda: float(np.sum(w * f(params["x"]))), params, grads) < 1e-4


def test_dense_identity_and_bias_gradient():
    layer = Dense(3, 3)
    layer.params["W"][...] = np.eye(3)
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(layer.forward(x), x)
    dy = np.arange(6.0).reshape(2, 3) + 1
    _, _, db = layer.backward(dy)
    assert np.array_equal(db, dy.sum(axis=0))


def test_dense_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    layer = Dense(5, 4, rng)
    x = rng.normal(size=(3, 5))
    target = rng.normal(size=(3, 4))

    def f():
        return mse_loss(layer.forward(x), target)[0]

    _, d = mse_loss(layer.forward(x), target)
    _, dW, db = layer.backward(d)
    assert grad_check(f, layer.params, {"W": dW, "b": db}) < 1e-4


def test_dense_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        Dense(3, 2).forward(np.ones((1, 4)))


def test_losses():
    x = np.array([1.0, 2.0])
    loss, g = mse_loss(x, x)
    assert loss == 0 and not g.any()
    assert bce_loss(np.array([0.0]), np.array([1.0]))[0] == pytest.approx(np.log(2))
    with pytest.raises(ShapeMismatch):
        mse_loss(np.ones(2), np.ones(3))


@pytest.mark.parametrize("kind", ["mse", "bce"])
def test_loss_gradients(kind):
    rng = np.random.default_rng(2)
    p = {"z": rng.normal(size=6)}
    t = rng.integers(0, 2, 6).astype(float) if kind == "bce" else rng.normal(size=6)
    fn = bce_loss if kind == "bce" else mse_loss
    _, g = fn(p["z"], t)
    assert grad_check(lambda: fn(p["z"], t)[0], p, {"z": g}) < 1e-6


def test_two_layer_tanh_net():
    rng = np.random.default_rng(3)
    l1, l2 = Dense(4, 6, rng), Dense(6, 1, rng)
    x = rng.normal(size=(5, 4))
    y = rng.normal(size=(5, 1))
    params = {"W1": l1.params["W"], "b1": l1.params["b"], "W2": l2.params["W"], "b2": l2.params["b"]}

    def f():
        return mse_loss(l2.forward(tanh(l1.forward(x))), y)[0]

    z = l1.forward(x)
    _, d = mse_loss(l2.forward(tanh(z)), y)
    dh, dW2, db2 = l2.backward(d)
    _, dW1, db1 = l1.backward(dh * (1 - np.tanh(z) ** 2))
    assert grad_check(f, params, {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2}) < 1e-4


def test_grad_check_quadratic_and_corrupted():
    p = {"p": np.array([0.3, -1.2, 2.0])}
    f = lambda: float(np.sum(p["p"] ** 2))  # noqa: E731
    assert grad_check(f, p, {"p": 2 * p["p"]}) < 1e-8
    assert grad_check(f, p, {"p": 4 * p["p"]}) == pytest.approx(0.5, abs=1e-6)


def test_adam():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, {}, lr=0.1)
    assert np.array_equal(p["w"], [1.0, -2.0])
    # a single bias-corrected step moves each coordinate by lr * g / (|g| + eps)
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.array([0.5, -3.0])}, {}, lr=0.01)
    assert np.allclose(p["w"], [1.0 - 0.01, -2.0 + 0.01], atol=1e-9)

    def trajectory():
        q = {"w": np.array([0.2, 0.4])}
        opt = Adam(0.05)
        for k in range(5):
            opt.step(q, {"w": np.array([k, -k]) * 0.3 + q["w"]})
        return q["w"]

    assert np.array_equal(trajectory(), trajectory())
    with pytest.raises(ShapeMismatch):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, {})


def test_checkpoint_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(4)
    t = {"a": rng.normal(size=(3, 2)), "b": np.array([np.pi, 1e-300, -0.1])}
    save_checkpoint(tmp_path / "c.json", t, {"k": 1})
    back, meta = load_checkpoint(tmp_path / "c.json")
    assert meta == {"k": 1}
    for k in t:
        assert np.array_equal(back[k], t[k])
