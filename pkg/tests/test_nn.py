import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowpost.errors import ConfigurationError, NonFiniteGradientError, ShapeError
from flowpost.experiments import fd_check
from flowpost.nn import (ACTIVATIONS, activation, adam_init, adam_step, init_mlp, mlp_backward,
                         mlp_forward, softplus, softplus_inv)


@pytest.mark.parametrize("name", sorted(ACTIVATIONS))
def test_activation_derivatives_match_finite_differences(name):
    f, df, ddf = activation(name)
    x = np.linspace(-3, 3, 41) + 0.013  # keep clear of the relu kink
    h = 1e-6
    assert np.allclose(df(x), (f(x + h) - f(x - h)) / (2 * h), atol=1e-6)
    assert np.allclose(ddf(x), (df(x + h) - df(x - h)) / (2 * h), atol=1e-5)


def test_unknown_activation():
    with pytest.raises(ConfigurationError):
        activation("tanhh")
    with pytest.raises(ConfigurationError):
        init_mlp([2, 3], "tanhh")


@given(st.floats(min_value=1e-6, max_value=30.0))
def test_softplus_inverse(y):
    assert softplus(softplus_inv(y)) == pytest.approx(y, rel=1e-9)


def test_init_shapes_and_scale():
    net = init_mlp([50, 400, 3], seed=1)
    assert [W.shape for W in net.weights] == [(400, 50), (3, 400)]
    assert np.std(net.weights[0]) == pytest.approx(np.sqrt(2 / 50), rel=0.05)
    assert all(np.all(b == 0) for b in net.biases)
    assert net.num_params() == 50 * 400 + 400 + 400 * 3 + 3


@pytest.mark.parametrize("name", ["elu", "silu", "softplus"])
def test_mlp_backward_matches_finite_differences(name):
    rng = np.random.default_rng(3)
    net = init_mlp([4, 12, 12, 3], name, rng=rng)
    x, up = rng.standard_normal((6, 4)), rng.standard_normal((6, 3))
    grads, gin = mlp_backward(net, x, up)
    err = fd_check(lambda: float(np.sum(up * mlp_forward(net, x))), net.arrays(),
                   grads.arrays(), rng=rng)
    assert err < 1e-6
    fd_in = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            e = np.zeros_like(x)
            e[i, j] = 1e-6
            fd_in[i, j] = np.sum(up * (mlp_forward(net, x + e) - mlp_forward(net, x - e))) / 2e-6
    assert np.allclose(gin, fd_in, atol=1e-6)


def test_forward_accepts_single_row():
    net = init_mlp([3, 5, 2], seed=0)
    x = np.arange(3.0)
    assert mlp_forward(net, x).shape == (2,)
    assert np.array_equal(mlp_forward(net, x), mlp_forward(net, x[None])[0])
    with pytest.raises(ShapeError):
        mlp_forward(net, np.zeros((2, 4)))


def test_adam_first_step_is_signed_lr():
    # after one bias-corrected step each entry moves by lr * g / (|g| + eps')
    p = [np.array([1.0, -2.0, 3.0])]
    g = [np.array([0.5, -4.0, 1e-3])]
    st_ = adam_init(p, lr=0.1)
    adam_step(p, g, st_)
    expect = np.array([1.0, -2.0, 3.0]) - 0.1 * g[0] / (np.abs(g[0]) + 1e-8)
    assert np.allclose(p[0], expect, rtol=1e-12)


def test_adamw_decay_applies_before_update():
    p = [np.array([2.0])]
    st_ = adam_init(p, lr=0.1, weight_decay=0.5)
    adam_step(p, [np.array([0.0])], st_)
    assert p[0][0] == pytest.approx(2.0 * (1 - 0.05))


def test_adam_minimizes_quadratic():
    rng = np.random.default_rng(0)
    target = rng.standard_normal(5)
    p = [np.zeros(5)]
    st_ = adam_init(p, lr=0.05)
    for _ in range(2000):
        adam_step(p, [2 * (p[0] - target)], st_)
    assert np.allclose(p[0], target, atol=1e-3)


def test_adam_rejects_non_finite_without_side_effects():
    p = [np.ones(2), np.ones(3)]
    st_ = adam_init(p)
    with pytest.raises(NonFiniteGradientError) as info:
        adam_step(p, [np.zeros(2), np.array([0.0, np.nan, 1.0])], st_)
    assert info.value.index == 1
    assert st_.step_count == 0 and np.all(p[0] == 1) and np.all(p[1] == 1)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), st.integers(1, 4))
def test_backward_shapes(batch, width, out):
    net = init_mlp([3, width, out], seed=batch)
    x = np.ones((batch, 3))
    grads, gin = mlp_backward(net, x, np.ones((batch, out)))
    assert gin.shape == x.shape
    assert [a.shape for a in grads.arrays()] == [a.shape for a in net.arrays()]
