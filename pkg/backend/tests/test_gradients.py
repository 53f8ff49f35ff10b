"""Central finite-difference checks of every analytic gradient."""
import numpy as np
import pytest

from src.models.base import Mode
from src.nncore import (
    conv1d_backward,
    conv1d_forward,
    cross_entropy,
    dense_backward,
    dense_forward,
    init_params,
    maxpool1d_backward,
    maxpool1d_forward,
    model_backward,
    model_forward,
    relu,
    relu_backward,
    softmax,
)

H = 1e-6


def rel_err(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-4)


def numeric_grad(f, array, index):
    original = array[index]
    array[index] = original + H
    plus = f()
    array[index] = original - H
    minus = f()
    array[index] = original
    return (plus - minus) / (2 * H)


def sample_indices(rng, shape, count):
    return [tuple(int(rng.integers(0, d)) for d in shape) for _ in range(count)]


def test_conv1d_gradients(rng):
    x = rng.normal(size=(2, 9, 3))
    w = rng.normal(size=(4, 3, 3))
    b = rng.normal(size=4)
    r = rng.normal(size=(2, 7, 4))

    def objective():
        return float(np.sum(conv1d_forward(x, w, b)[0] * r))

    _, cache = conv1d_forward(x, w, b)
    gx, gw, gb = conv1d_backward(cache, r)
    for array, grad in ((x, gx), (w, gw), (b, gb)):
        for idx in sample_indices(rng, array.shape, 40):
            assert rel_err(grad[idx], numeric_grad(objective, array, idx)) < 1e-5


def test_dense_gradients(rng):
    x = rng.normal(size=(3, 6))
    w = rng.normal(size=(5, 6))
    b = rng.normal(size=5)
    r = rng.normal(size=(3, 5))

    def objective():
        return float(np.sum(dense_forward(x, w, b)[0] * r))

    _, cache = dense_forward(x, w, b)
    gx, gw, gb = dense_backward(cache, r)
    for array, grad in ((x, gx), (w, gw), (b, gb)):
        for idx in sample_indices(rng, array.shape, 40):
            assert rel_err(grad[idx], numeric_grad(objective, array, idx)) < 1e-5


def test_relu_gradient_away_from_zero(rng):
    x = rng.uniform(0.1, 1.0, size=(4, 5)) * rng.choice([-1.0, 1.0], size=(4, 5))
    r = rng.normal(size=(4, 5))

    def objective():
        return float(np.sum(relu(x)[0] * r))

    _, mask = relu(x)
    grad = relu_backward(mask, r)
    for idx in sample_indices(rng, x.shape, 20):
        assert rel_err(grad[idx], numeric_grad(objective, x, idx)) < 1e-5


def test_maxpool_gradient(rng):
    # distinct values keep the argmax stable under perturbation
    x = rng.permutation(np.arange(24, dtype=float)).reshape(2, 6, 2) * 0.1
    r = rng.normal(size=(2, 3, 2))

    def objective():
        return float(np.sum(maxpool1d_forward(x, 2)[0] * r))

    _, cache = maxpool1d_forward(x, 2)
    grad = maxpool1d_backward(cache, r)
    for idx in sample_indices(rng, x.shape, 20):
        assert rel_err(grad[idx], numeric_grad(objective, x, idx)) < 1e-5


def test_softmax_cross_entropy_gradient(rng):
    logits = rng.normal(size=(4, 4))
    targets = np.eye(4)[rng.integers(0, 4, size=4)]

    def objective():
        return cross_entropy(softmax(logits), targets)[0]

    _, grad = cross_entropy(softmax(logits), targets)
    np.testing.assert_allclose(grad, (softmax(logits) - targets) / 4, atol=1e-12)
    for idx in sample_indices(rng, logits.shape, 16):
        assert rel_err(grad[idx], numeric_grad(objective, logits, idx)) < 1e-5


@pytest.mark.parametrize("mode", [Mode.INFER, Mode.TRAIN])
def test_end_to_end_gradients(tiny_model_cfg, rng, mode):
    params = init_params(tiny_model_cfg, 11)
    # nonzero biases keep pre-activations off the ReLU kink
    for name, value in params.items():
        if name.endswith(".bias"):
            magnitude = rng.uniform(0.05, 0.5, size=value.shape)
            value[...] = magnitude * rng.choice([-1.0, 1.0], size=value.shape)
    x = rng.normal(size=(3, 12, 1))
    targets = np.eye(4)[[0, 2, 3]]

    def forward():
        # same dropout masks on every evaluation
        return model_forward(tiny_model_cfg, params, x, mode, np.random.default_rng(99))

    def objective():
        return cross_entropy(forward()[0], targets)[0]

    _, cache = forward()
    _, grads = model_backward(cache, targets)

    checked = 0
    names = sorted(params)
    while checked < 100:
        name = names[int(rng.integers(0, len(names)))]
        idx = sample_indices(rng, params[name].shape, 1)[0]
        numeric = numeric_grad(objective, params[name], idx)
        assert rel_err(grads[name][idx], numeric) < 1e-4, f"{name}{idx}"
        checked += 1
