"""Small multilayer perceptrons with explicit reverse-mode gradients and Adam.

Everything is float64 numpy. Inputs are batched row-wise: ``x`` has shape
``(batch, in_dim)``; a 1-D ``x`` is treated as a single row. Weight matrix
``l`` has shape ``(fan_out, fan_in)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, NonFiniteGradientError, ShapeError

# ---------------------------------------------------------------------------
# activations: value, first and second derivative


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_d(x):
    # subgradient 0 at the kink
    return (x > 0).astype(x.dtype)


def _relu_dd(x):
    return np.zeros_like(x)


def _elu(x):
    out = np.minimum(x, 0.0)
    np.expm1(out, out=out)
    out += np.maximum(x, 0.0)
    return out


def _elu_d(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def _elu_dd(x):
    return np.where(x > 0, 0.0, np.exp(np.minimum(x, 0.0)))


def _silu(x):
    return x * expit(x)


def _silu_d(x):
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


def _silu_dd(x):
    s = expit(x)
    return s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    """Inverse of softplus for ``y > 0``."""
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def _softplus_dd(x):
    s = expit(x)
    return s * (1.0 - s)


# derivative from the activation output, where that is cheaper
_FROM_OUTPUT = {"elu": lambda h: np.minimum(h, 0.0) + 1.0, "relu": lambda h: (h > 0).astype(h.dtype)}

ACTIVATIONS = {
    "relu": (_relu, _relu_d, _relu_dd),
    "elu": (_elu, _elu_d, _elu_dd),
    "silu": (_silu, _silu_d, _silu_dd),
    "softplus": (softplus, expit, _softplus_dd),
}


def activation(name):
    """Return ``(f, f', f'')`` for a named activation."""
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}"
        ) from None


# ---------------------------------------------------------------------------
# parameters


@dataclass
class MlpParams:
    layer_dims: list
    activation: str
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def out_dim(self):
        return self.layer_dims[-1]

    def arrays(self):
        """Parameter arrays in the canonical order W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def num_params(self):
        return sum(a.size for a in self.arrays())

    def zeros_like(self):
        """A gradient buffer congruent with these parameters."""
        return MlpParams(
            list(self.layer_dims),
            self.activation,
            [np.zeros_like(W) for W in self.weights],
            [np.zeros_like(b) for b in self.biases],
        )

    def copy(self):
        return MlpParams(
            list(self.layer_dims),
            self.activation,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
        )


# a gradient buffer is just a parameter-shaped container
GradBuffer = MlpParams


def init_mlp(layer_dims, activation="elu", seed=0, rng=None):
    """He-initialized MLP: weights ~ N(0, 2/fan_in), zero biases."""
    layer_dims = [int(k) for k in layer_dims]
    if len(layer_dims) < 2 or any(k < 1 for k in layer_dims):
        raise ConfigurationError(f"invalid layer_dims {layer_dims}")
    if activation not in ACTIVATIONS:
        raise ConfigurationError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed) if rng is None else rng
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(layer_dims, activation, weights, biases)


def _as_rows(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"expected input with {dim} columns, got shape {np.shape(x)}")
    return x, single


def mlp_forward_cached(params, x):
    """Forward pass returning ``(output, cache)``; ``x`` must be 2-D."""
    f, _, _ = activation(params.activation)
    inputs, pre = [x], []
    h = x
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ W.T + b
        if l == last:
            return a, (inputs, pre)
        pre.append(a)
        h = f(a)
        inputs.append(h)
    raise AssertionError("unreachable")


def mlp_forward(params, x):
    """Evaluate the network; the final layer is affine."""
    xr, single = _as_rows(x, params.in_dim)
    out, _ = mlp_forward_cached(params, xr)
    return out[0] if single else out


def mlp_backward(params, x, upstream_grad, cache=None):
    """Gradients of ``sum(upstream * output)`` w.r.t. parameters and input.

    Returns ``(grads, input_grad)`` where ``grads`` is a :class:`GradBuffer`
    summed over the batch.
    """
    xr, single = _as_rows(x, params.in_dim)
    up = np.asarray(upstream_grad, dtype=float)
    if up.ndim == 1:
        up = up[None, :]
    if up.shape != (xr.shape[0], params.out_dim):
        raise ShapeError(f"upstream shape {up.shape} does not match output")
    if cache is None:
        _, cache = mlp_forward_cached(params, xr)
    inputs, pre = cache
    _, df, _ = activation(params.activation)
    df_out = _FROM_OUTPUT.get(params.activation)
    grads = params.zeros_like()
    delta = up
    for l in range(len(params.weights) - 1, -1, -1):
        grads.weights[l] = delta.T @ inputs[l]
        grads.biases[l] = delta.sum(axis=0)
        delta = delta @ params.weights[l]
        if l > 0:
            if df_out is not None:
                delta *= df_out(inputs[l])
            else:
                delta *= df(pre[l - 1])
    return grads, (delta[0] if single else delta)


# ---------------------------------------------------------------------------
# Adam / AdamW


@dataclass
class AdamState:
    m: list
    v: list
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


def adam_init(arrays, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    return AdamState(
        [np.zeros_like(a) for a in arrays],
        [np.zeros_like(a) for a in arrays],
        0, lr, beta1, beta2, eps, weight_decay,
    )


def adam_step(params, grads, state):
    """Bias-corrected Adam update, in place on ``params`` (list of arrays).

    With ``weight_decay > 0`` the decoupled AdamW decay is applied to the
    parameters before the moment update. If any gradient array has a
    non-finite entry nothing is modified and :class:`NonFiniteGradientError`
    names the offending array index.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state are not congruent")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"gradient {i} has shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(i)
    state.step_count += 1
    k = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**k
    c2 = 1.0 - b2**k
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if state.weight_decay > 0:
            p *= 1.0 - state.lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
