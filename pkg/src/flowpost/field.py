"""Block-triangular velocity fields on the joint (y, theta) space.

The y-velocity ``f(y, t)`` never sees theta. The theta-velocity ``g`` is
either a plain MLP over ``(y, theta, t)`` or the theta-gradient of a
partially input-convex network ``psi(y, theta, t)`` (convex in theta),
which makes the theta-flow monotone.

PICNN layout (all per row, ``sp`` = softplus)::

    u          = context_mlp([y, t])          -> c_l, s_l, b, q
    th_l       = theta * (1 + s_l)
    z_1        = sp(A_0 th_0 + c_0)
    z_{l+1}    = sp(sp(V_l) z_l + A_l th_l + c_l)
    psi        = sp(w) . z_L + b . theta + 1/2 sum_j (alpha + sp(q_j)) theta_j^2

The context-dependent diagonal curvature ``sp(q)`` lets the potential
express a near-Gaussian velocity ``a(y, t) * (theta - m(y, t))`` directly.

For fixed ``(y, t)`` every layer is a nonnegative combination of convex,
nondecreasing functions of affine maps of theta, so ``psi`` is convex.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, ShapeError
from .nn import (
    MlpParams,
    activation,
    init_mlp,
    mlp_backward,
    mlp_forward_cached,
    softplus,
    softplus_inv,
)


@dataclass
class PicnnParams:
    n: int
    d: int
    hidden: list
    context: MlpParams  # (y, t) -> [c_0..c_{L-1}, s_0..s_{L-1}, b, q]
    A: list  # A_l: (hidden[l], d)
    V: list  # raw V_l for l >= 1: (hidden[l], hidden[l-1])
    w: np.ndarray  # raw readout, (hidden[-1],)
    alpha: np.ndarray  # shape (1,), >= 0
    alpha_trainable: bool = False

    @property
    def num_layers(self):
        return len(self.hidden)

    def context_dim(self):
        return sum(self.hidden) + (self.num_layers + 2) * self.d

    def arrays(self):
        out = self.context.arrays() + list(self.A) + list(self.V) + [self.w]
        if self.alpha_trainable:
            out.append(self.alpha)
        return out

    def copy(self):
        return PicnnParams(
            self.n, self.d, list(self.hidden), self.context.copy(),
            [a.copy() for a in self.A], [v.copy() for v in self.V],
            self.w.copy(), self.alpha.copy(), self.alpha_trainable,
        )

    def split_context(self, u):
        """Split context rows into (c list, s list, b, q)."""
        c, s = [], []
        k = 0
        for h in self.hidden:
            c.append(u[:, k:k + h])
            k += h
        for _ in self.hidden:
            s.append(u[:, k:k + self.d])
            k += self.d
        return c, s, u[:, k:k + self.d], u[:, k + self.d:k + 2 * self.d]


def init_picnn(n, d, hidden=(64, 64, 64), context_hidden=(64, 64), activation="elu",
               alpha=1e-2, alpha_trainable=False, seed=0, rng=None):
    rng = np.random.default_rng(seed) if rng is None else rng
    hidden = [int(h) for h in hidden]
    if not hidden or any(h < 1 for h in hidden) or d < 1 or n < 0:
        raise ConfigurationError("invalid PICNN dimensions")
    if alpha < 0:
        raise ConfigurationError("alpha must be nonnegative")
    L = len(hidden)
    P = sum(hidden) + (L + 2) * d
    context = init_mlp([n + 1, *context_hidden, P], activation, rng=rng)
    # start close to a near-linear potential: small context outputs
    context.weights[-1] *= 0.1
    A = [rng.normal(0.0, 1.0 / np.sqrt(d), size=(h, d)) for h in hidden]
    V = []
    for l in range(1, L):
        mean = softplus_inv(1.0 / hidden[l - 1])
        V.append(mean + 0.1 * rng.normal(size=(hidden[l], hidden[l - 1])))
    w = softplus_inv(1.0 / hidden[-1]) + 0.1 * rng.normal(size=hidden[-1])
    return PicnnParams(n, d, hidden, context, A, V, w, np.array([float(alpha)]),
                       alpha_trainable)


def _yt(y, t, n):
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[None, :]
    if y.shape[1] != n:
        raise ShapeError(f"expected y with {n} columns, got {y.shape}")
    t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1, 1), (y.shape[0], 1))
    return np.concatenate([y, t], axis=1)


def _rows(x, dim, name):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"expected {name} with {dim} columns, got {np.shape(x)}")
    return x


# ---------------------------------------------------------------------------
# PICNN evaluation


def picnn_context(params, y, t):
    """Context outputs for rows of ``(y, t)``; shape (rows, context_dim)."""
    u, _ = mlp_forward_cached(params.context, _yt(y, t, params.n))
    return u


def _convex_forward(params, u, theta):
    c, s, b, q = params.split_context(u)
    gates = [1.0 + sl for sl in s]
    P = [softplus(v) for v in params.V]
    pre, zs = [], []
    z = None
    for l in range(params.num_layers):
        a = (theta * gates[l]) @ params.A[l].T + c[l]
        if l > 0:
            a = a + z @ P[l - 1].T
        zs.append(z)
        pre.append(a)
        z = softplus(a)
    return dict(c=c, gates=gates, b=b, q=q, kq=params.alpha[0] + softplus(q), P=P, pre=pre,
                zs=zs, zL=z)


def _value_from(params, fw, theta):
    wpos = softplus(params.w)
    return (fw["zL"] @ wpos + np.sum(fw["b"] * theta, axis=1)
            + 0.5 * np.sum(fw["kq"] * theta * theta, axis=1))


def _grad_from(params, fw, theta):
    wpos = softplus(params.w)
    delta = wpos * expit(fw["pre"][-1])
    g = fw["b"] + fw["kq"] * theta
    for l in range(params.num_layers - 1, -1, -1):
        g = g + (delta @ params.A[l]) * fw["gates"][l]
        if l > 0:
            delta = (delta @ fw["P"][l - 1]) * expit(fw["pre"][l - 1])
    return np.broadcast_to(g, theta.shape)


def picnn_value(params, y, theta, t):
    """Potential ``psi(y, theta, t)`` per row."""
    theta = _rows(theta, params.d, "theta")
    u = picnn_context(params, y, t)
    return _value_from(params, _convex_forward(params, u, theta), theta)


def picnn_grad_theta(params, y, theta, t):
    """Exact ``grad_theta psi`` per row."""
    theta = _rows(theta, params.d, "theta")
    u = picnn_context(params, y, t)
    return _grad_from(params, _convex_forward(params, u, theta), theta)


def picnn_grad_from_context(params, u, theta):
    """``grad_theta psi`` given precomputed context rows (broadcastable)."""
    return _grad_from(params, _convex_forward(params, u, theta), theta)


def picnn_jvp(params, y, theta, t, direction):
    """Directional derivative ``direction . grad_theta psi`` via an augmented
    forward pass that carries ``(z_l, dz_l)`` together."""
    theta = _rows(theta, params.d, "theta")
    u = picnn_context(params, y, t)
    fw = _convex_forward(params, u, theta)
    js = _jvp_pass(params, fw, direction)
    return _jvp_out(params, fw, js, theta, direction)


def _jvp_pass(params, fw, r):
    js, es = [], []
    j = None
    for l in range(params.num_layers):
        e = (r * fw["gates"][l]) @ params.A[l].T
        if l > 0:
            e = e + j @ fw["P"][l - 1].T
        js.append(j)
        es.append(e)
        j = expit(fw["pre"][l]) * e
    return dict(js=js, es=es, jL=j)


def _jvp_out(params, fw, jv, theta, r):
    wpos = softplus(params.w)
    return (jv["jL"] @ wpos + np.sum(fw["b"] * r, axis=1)
            + np.sum(fw["kq"] * theta * r, axis=1))


def picnn_param_grads(params, y, theta, t, upstream, return_grad=False):
    """Gradients of ``sum_rows upstream . grad_theta psi`` w.r.t. all parameters.

    ``upstream . grad_theta psi`` is the JVP of psi along ``upstream``; we run
    the augmented forward pass and then reverse-mode over it (this needs the
    second derivative of softplus). Returns a list aligned with
    ``params.arrays()``; with ``return_grad`` also the gradient itself.
    ``upstream`` may be a callable receiving the gradient and returning the
    upstream rows.
    """
    theta = _rows(theta, params.d, "theta")
    yt = _yt(y, t, params.n)
    u, ctx_cache = mlp_forward_cached(params.context, yt)
    fw = _convex_forward(params, u, theta)
    g = None
    if callable(upstream):
        # upstream computed from the gradient itself (e.g. a regression residual)
        g = _grad_from(params, fw, theta)
        upstream = upstream(g)
    r = _rows(upstream, params.d, "upstream")
    if r.shape[0] != theta.shape[0]:
        raise ShapeError("upstream and theta row counts differ")
    jv = _jvp_pass(params, fw, r)
    grads = _param_grads_core(params, fw, jv, theta, r)
    ctx_grads, _ = mlp_backward(params.context, yt, grads.pop("u"), cache=ctx_cache)
    out = ctx_grads.arrays() + grads["A"] + grads["V"] + [grads["w"]]
    if params.alpha_trainable:
        out.append(grads["alpha"])
    if return_grad:
        return out, (_grad_from(params, fw, theta) if g is None else g)
    return out


def _param_grads_core(params, fw, jv, theta, r):
    L = params.num_layers
    d1 = [expit(a) for a in fw["pre"]]
    wsig = expit(params.w)
    wpos = softplus(params.w)
    jbar = np.broadcast_to(wpos, jv["jL"].shape)
    grad_w = jv["jL"].sum(axis=0) * wsig
    abar = np.zeros_like(fw["pre"][-1])
    gA = [None] * L
    gP = [None] * (L - 1)
    cbar = [None] * L
    sbar = [None] * L
    for l in range(L - 1, -1, -1):
        ebar = jbar * d1[l]
        s = d1[l]
        abar = abar + jbar * jv["es"][l] * s * (1.0 - s)
        rg = r * fw["gates"][l]
        tg = theta * fw["gates"][l]
        gA[l] = ebar.T @ rg + abar.T @ tg
        sbar[l] = r * (ebar @ params.A[l]) + theta * (abar @ params.A[l])
        cbar[l] = abar
        if l > 0:
            Pl = fw["P"][l - 1]
            gP[l - 1] = ebar.T @ jv["js"][l] + abar.T @ fw["zs"][l]
            jbar = ebar @ Pl
            abar = (abar @ Pl) * d1[l - 1]
    gV = [gp * expit(v) for gp, v in zip(gP, params.V)]
    qbar = r * theta * expit(fw["q"])
    ubar = np.concatenate(cbar + sbar + [np.broadcast_to(r, theta.shape), qbar], axis=1)
    return dict(u=ubar, A=gA, V=gV, w=grad_w,
                alpha=np.array([np.sum(theta * r)]))


# ---------------------------------------------------------------------------
# block-triangular field


@dataclass
class BlockTriangularField:
    n: int
    d: int
    f_net: MlpParams  # (y, t) -> vy
    g_net: object  # MlpParams over (y, theta, t) or PicnnParams
    kind: str = "plain"

    def __post_init__(self):
        if self.kind not in ("plain", "monotone"):
            raise ConfigurationError(f"unknown field kind {self.kind!r}")
        if self.f_net.in_dim != self.n + 1 or self.f_net.out_dim != self.n:
            raise ShapeError("f_net must map (y, t) to R^n")
        if self.kind == "plain":
            if self.g_net.in_dim != self.n + self.d + 1 or self.g_net.out_dim != self.d:
                raise ShapeError("g_net must map (y, theta, t) to R^d")

    def parameters(self):
        """All trainable arrays: f-net first, then g."""
        return self.f_net.arrays() + self.g_net.arrays()

    def copy(self):
        return BlockTriangularField(self.n, self.d, self.f_net.copy(),
                                    self.g_net.copy(), self.kind)

    def f(self, y, t):
        out, _ = mlp_forward_cached(self.f_net, _yt(y, t, self.n))
        return out

    def g(self, y, theta, t):
        theta = _rows(theta, self.d, "theta")
        if self.kind == "monotone":
            return picnn_grad_theta(self.g_net, y, theta, t)
        yt = _yt(y, t, self.n)
        x = np.concatenate([yt[:, :self.n], theta, yt[:, self.n:]], axis=1)
        out, _ = mlp_forward_cached(self.g_net, x)
        return out

    def velocity(self, y, theta, t):
        return self.f(y, t), self.g(y, theta, t)

    # -- cached evaluation along a frozen y-trajectory -----------------------
    def g_context(self, y, t):
        """Everything in ``g`` that depends on ``(y, t)`` alone.

        For a plain MLP this is the y/t part of the first pre-activation; for
        a PICNN it is the context-network output.
        """
        if self.kind == "monotone":
            return picnn_context(self.g_net, y, t)
        yt = _yt(y, t, self.n)
        W0 = self.g_net.weights[0]
        cols = np.r_[0:self.n, self.n + self.d]
        return yt @ W0[:, cols].T + self.g_net.biases[0]

    def g_from_context(self, ctx, theta):
        if self.kind == "monotone":
            return picnn_grad_from_context(self.g_net, ctx, theta)
        net = self.g_net
        fn = activation(net.activation)[0]
        a = theta @ net.weights[0][:, self.n:self.n + self.d].T + ctx
        for W, b in zip(net.weights[1:], net.biases[1:]):
            a = fn(a) @ W.T + b
        return a


def joint_velocity(field, y, theta, t):
    """``(vy, vtheta)``; ``vy`` depends on ``(y, t)`` only."""
    return field.velocity(y, theta, t)


def make_field(n, d, kind="plain", hidden=(64, 64, 64, 64), activation="elu",
               picnn_hidden=(64, 64, 64), context_hidden=(64, 64), alpha=1e-2,
               alpha_trainable=False, seed=0):
    """Build a freshly initialized field."""
    rng = np.random.default_rng(seed)
    f_net = init_mlp([n + 1, *hidden, n], activation, rng=rng)
    if kind == "plain":
        g_net = init_mlp([n + d + 1, *hidden, d], activation, rng=rng)
    elif kind == "monotone":
        g_net = init_picnn(n, d, picnn_hidden, context_hidden, activation, alpha,
                           alpha_trainable, rng=rng)
    else:
        raise ConfigurationError(f"unknown field kind {kind!r}")
    return BlockTriangularField(n, d, f_net, g_net, kind)
