import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowpost.errors import ConfigurationError, ShapeError
from flowpost.experiments import fd_check
from flowpost.field import (init_picnn, make_field, picnn_context, picnn_grad_from_context,
                            picnn_grad_theta, picnn_jvp, picnn_param_grads, picnn_value)


@pytest.fixture(scope="module")
def picnn():
    return init_picnn(3, 2, hidden=(10, 10, 10), context_hidden=(8,), seed=4)


def test_potential_is_convex_along_lines(picnn):
    rng = np.random.default_rng(0)
    y, t = rng.standard_normal((200, 3)), rng.uniform(size=200)
    a, b = 3 * rng.standard_normal((200, 2)), 3 * rng.standard_normal((200, 2))
    lam = rng.uniform(size=(200, 1))
    mid = picnn_value(picnn, y, lam * a + (1 - lam) * b, t)
    chord = lam[:, 0] * picnn_value(picnn, y, a, t) + (1 - lam[:, 0]) * picnn_value(picnn, y, b, t)
    assert np.all(mid <= chord + 1e-10)


def test_quadratic_skip_alone_gives_half_squared_norm():
    p = init_picnn(3, 2, hidden=(6, 6), context_hidden=(5,), alpha=1.0, seed=1)
    for a in p.A:
        a[:] = 0.0
    p.context.weights[-1][:] = 0.0
    p.context.biases[-1][:] = 0.0
    p.context.biases[-1][-p.d:] = -50.0  # curvature head sp(q) ~ 2e-22
    rng = np.random.default_rng(2)
    y, t = rng.standard_normal((20, 3)), rng.uniform(size=20)
    th = 3 * rng.standard_normal((20, 2))
    base = picnn_value(p, y, np.zeros((20, 2)), t)
    assert np.allclose(picnn_value(p, y, th, t) - base, 0.5 * np.sum(th ** 2, axis=1), atol=1e-12)
    assert np.allclose(picnn_grad_theta(p, y, th, t), th, atol=1e-12)


def test_context_curvature_is_nonnegative_and_diagonal():
    p = init_picnn(3, 2, hidden=(6, 6), context_hidden=(5,), alpha=0.0, seed=1)
    for a in p.A:
        a[:] = 0.0
    p.context.weights[-1][:] = 0.0
    p.context.biases[-1][:] = 0.0
    p.context.biases[-1][-2:] = [-3.0, 2.0]
    th = np.random.default_rng(3).standard_normal((10, 2))
    g = picnn_grad_theta(p, np.zeros((10, 3)), th, 0.5)
    sp = np.log1p(np.exp([-3.0, 2.0]))
    assert np.allclose(g, th * sp, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_gradient_field_is_monotone(seed):
    p = init_picnn(2, 3, hidden=(8, 8), context_hidden=(6,), seed=seed % 7)
    rng = np.random.default_rng(seed)
    y, t = rng.standard_normal((50, 2)), rng.uniform(size=50)
    a, b = 4 * rng.standard_normal((50, 3)), 4 * rng.standard_normal((50, 3))
    ga, gb = picnn_grad_theta(p, y, a, t), picnn_grad_theta(p, y, b, t)
    assert np.all(np.sum((ga - gb) * (a - b), axis=1) >= -1e-10)


def test_input_gradient_matches_finite_differences(picnn):
    rng = np.random.default_rng(1)
    y, th, t = rng.standard_normal((6, 3)), rng.standard_normal((6, 2)), rng.uniform(size=6)
    g = picnn_grad_theta(picnn, y, th, t)
    for j in range(2):
        e = np.zeros(2)
        e[j] = 1e-6
        fd = (picnn_value(picnn, y, th + e, t) - picnn_value(picnn, y, th - e, t)) / 2e-6
        assert np.allclose(g[:, j], fd, rtol=1e-6, atol=1e-8)


def test_jvp_equals_directional_gradient(picnn):
    rng = np.random.default_rng(2)
    y, th, t = rng.standard_normal((5, 3)), rng.standard_normal((5, 2)), rng.uniform(size=5)
    r = rng.standard_normal((5, 2))
    assert np.allclose(picnn_jvp(picnn, y, th, t, r),
                       np.sum(r * picnn_grad_theta(picnn, y, th, t), axis=1), rtol=1e-12)


@pytest.mark.parametrize("trainable", [False, True])
def test_param_grads_of_gradient_match_finite_differences(trainable):
    p = init_picnn(3, 2, hidden=(7, 7), context_hidden=(5,), alpha=0.3,
                   alpha_trainable=trainable, seed=9)
    rng = np.random.default_rng(5)
    y, th, t = rng.standard_normal((4, 3)), rng.standard_normal((4, 2)), rng.uniform(size=4)
    up = rng.standard_normal((4, 2))
    grads = picnn_param_grads(p, y, th, t, up)
    assert len(grads) == len(p.arrays())
    err = fd_check(lambda: float(np.sum(up * picnn_grad_theta(p, y, th, t))), p.arrays(),
                   grads, rng=rng)
    assert err < 1e-6


def test_callable_upstream_sees_the_gradient(picnn):
    rng = np.random.default_rng(6)
    y, th, t = rng.standard_normal((4, 3)), rng.standard_normal((4, 2)), rng.uniform(size=4)
    target = rng.standard_normal((4, 2))
    via_callable, g = picnn_param_grads(picnn, y, th, t, lambda g: 2 * (g - target),
                                        return_grad=True)
    direct = picnn_param_grads(picnn, y, th, t, 2 * (picnn_grad_theta(picnn, y, th, t) - target))
    assert np.allclose(g, picnn_grad_theta(picnn, y, th, t))
    assert all(np.allclose(a, b) for a, b in zip(via_callable, direct))


@pytest.mark.parametrize("kind", ["plain", "monotone"])
def test_context_caching_reproduces_g(kind):
    f = make_field(2, 3, kind, hidden=(16, 16), picnn_hidden=(8, 8), context_hidden=(8,), seed=2)
    rng = np.random.default_rng(0)
    y, th, t = rng.standard_normal((5, 2)), rng.standard_normal((5, 3)), rng.uniform(size=5)
    ctx = f.g_context(y, t)
    assert np.allclose(f.g_from_context(ctx, th), f.g(y, th, t), atol=1e-12)


@pytest.mark.parametrize("kind", ["plain", "monotone"])
def test_y_velocity_ignores_theta(kind):
    f = make_field(2, 2, kind, hidden=(8,), picnn_hidden=(6,), context_hidden=(6,), seed=0)
    y, t = np.ones((3, 2)), np.full(3, 0.4)
    vy_a, _ = f.velocity(y, np.zeros((3, 2)), t)
    vy_b, _ = f.velocity(y, 100 * np.ones((3, 2)), t)
    assert np.array_equal(vy_a, vy_b)


def test_make_field_validation():
    with pytest.raises(ConfigurationError):
        make_field(1, 1, "affine")
    f = make_field(2, 2, "plain", hidden=(4,))
    with pytest.raises(ShapeError):
        f.g(np.zeros((2, 2)), np.zeros((2, 3)), 0.5)


def test_picnn_context_width(picnn):
    u = picnn_context(picnn, np.zeros((2, 3)), 0.3)
    assert u.shape == (2, picnn.context_dim())
    g = picnn_grad_from_context(picnn, u[:1], np.zeros((4, 2)))
    assert g.shape == (4, 2)
