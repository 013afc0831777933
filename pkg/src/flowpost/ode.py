"""Fixed-step integration of a trained block-triangular field.

Sampling conditions on an observation by first integrating the y-marginal
ODE backward from ``t = 1`` (where ``y = y*``) to ``t = 0`` and caching the
path on a half-step grid; the theta-ODE is then integrated along that frozen
path, for all draws at once. Reversing the theta-ODE gives vector ranks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cfm import VelocityModel, sample_source, sample_theta_source
from .errors import ConfigurationError, IntegrationError, ShapeError

INTEGRATORS = ("euler", "rk4")
MODES = ("exact_ytraj", "fixed_y")


@dataclass
class OdeConfig:
    integrator: str = "rk4"
    steps: int = 100
    mode: str = "exact_ytraj"

    def validate(self):
        if self.integrator not in INTEGRATORS:
            raise ConfigurationError(f"unknown integrator {self.integrator!r}")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown sampling mode {self.mode!r}")
        if int(self.steps) < 1:
            raise ConfigurationError("steps must be >= 1")
        return self


@dataclass
class YTrajectory:
    times: np.ndarray  # (2K+1,), ascending from 0 to 1
    values: np.ndarray  # (2K+1, n), standardized units

    @property
    def steps(self):
        return (len(self.times) - 1) // 2


@dataclass
class PosteriorDraws:
    theta: np.ndarray
    y_star: np.ndarray
    mode: str
    steps: int
    integrator: str = "rk4"


@dataclass
class RankResult:
    vector: np.ndarray  # R-hat(theta), source coordinates
    rank: np.ndarray  # |R-hat|
    sign: np.ndarray  # R-hat / |R-hat|, zero where the rank is zero


def _check(x, step):
    if not np.all(np.isfinite(x)):
        raise IntegrationError(step)


def _step(fn, x, t, h, integrator):
    if integrator == "euler":
        return x + h * fn(x, t)
    k1 = fn(x, t)
    k2 = fn(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = fn(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = fn(x + h * k3, t + h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(velocity_fn, x_start, t_start, t_end, config: OdeConfig, return_path=False):
    """Integrate ``dx/dt = velocity_fn(x, t)`` with ``config.steps`` fixed steps.

    ``t_end < t_start`` integrates backward in time.
    """
    config.validate()
    K = int(config.steps)
    h = (t_end - t_start) / K
    x = np.array(x_start, dtype=float)
    path = [x.copy()] if return_path else None
    for k in range(K):
        t = t_start + k * h
        x = _step(velocity_fn, x, t, h, config.integrator)
        _check(x, k)
        if return_path:
            path.append(x.copy())
    if return_path:
        return x, np.array(path)
    return x


def _scaled_obs(model, y_star):
    y_star = np.asarray(y_star, dtype=float).reshape(-1)
    if y_star.shape[0] != model.n:
        raise ShapeError(f"observation has length {y_star.shape[0]}, expected {model.n}")
    return y_star, model.scale_y(y_star)


def backward_y_trajectory(model: VelocityModel, y_star, steps=100, integrator="rk4",
                          scaled=False):
    """y-path from ``t = 1`` back to ``t = 0`` on the ``2K + 1`` half-step grid.

    With ``scaled=False`` the observation is given in original units.
    """
    y1 = np.asarray(y_star, dtype=float).reshape(1, -1)
    if not scaled:
        y1 = _scaled_obs(model, y1)[1].reshape(1, -1)
    field = model.field
    cfg = OdeConfig(integrator, 2 * int(steps))
    _, path = integrate(lambda y, t: field.f(y, t), y1, 1.0, 0.0, cfg, return_path=True)
    values = path[::-1, 0, :]
    values[-1] = y1[0]
    times = np.linspace(0.0, 1.0, 2 * int(steps) + 1)
    return YTrajectory(times, values)


def _node_contexts(model, config, y_scaled):
    """Per-node conditioning contexts for the theta-ODE (shared by all draws)."""
    K = int(config.steps)
    times = np.linspace(0.0, 1.0, 2 * K + 1)
    if config.mode == "exact_ytraj":
        ys = backward_y_trajectory(model, y_scaled, K, config.integrator, scaled=True).values
    else:
        ys = np.repeat(y_scaled.reshape(1, -1), 2 * K + 1, axis=0)
    ctx = model.field.g_context(ys, times)
    return [ctx[j:j + 1] for j in range(2 * K + 1)]


def _theta_flow(field, contexts, theta, config, reverse=False):
    K = int(config.steps)
    h = -1.0 / K if reverse else 1.0 / K
    g = field.g_from_context
    for k in range(K):
        i0 = 2 * (K - k) if reverse else 2 * k
        i1 = i0 - 2 if reverse else i0 + 2
        im = (i0 + i1) // 2
        if config.integrator == "euler":
            theta = theta + h * g(contexts[i0], theta)
        else:
            k1 = g(contexts[i0], theta)
            k2 = g(contexts[im], theta + 0.5 * h * k1)
            k3 = g(contexts[im], theta + 0.5 * h * k2)
            k4 = g(contexts[i1], theta + h * k3)
            theta = theta + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check(theta, k)
    return theta


def push_theta(model: VelocityModel, y_star, theta0, config: OdeConfig | None = None,
               contexts=None):
    """Apply the learned conditional map to reference points (unit source
    coordinates in, original units out)."""
    config = (config or OdeConfig()).validate()
    _, ys = _scaled_obs(model, y_star)
    if contexts is None:
        contexts = _node_contexts(model, config, ys)
    theta0 = model.theta_scale * np.atleast_2d(np.asarray(theta0, dtype=float))
    return model.unscale_theta(_theta_flow(model.field, contexts, theta0, config))


def sample_posterior(model: VelocityModel, y_star, num_samples, config: OdeConfig | None = None,
                     rng=None):
    """Posterior draws for one observation ``y_star`` (original units)."""
    config = (config or OdeConfig()).validate()
    if num_samples < 1:
        raise ConfigurationError("num_samples must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    y_star, _ = _scaled_obs(model, y_star)
    theta0 = sample_theta_source(model.source, int(num_samples), model.d, rng)
    theta = push_theta(model, y_star, theta0, config)
    return PosteriorDraws(theta, y_star, config.mode, int(config.steps), config.integrator)


def compute_rank(model: VelocityModel, y_star, theta1, config: OdeConfig | None = None,
                 contexts=None):
    """Vector rank by reverse integration of the theta-ODE from t=1 to t=0."""
    config = (config or OdeConfig()).validate()
    _, ys = _scaled_obs(model, y_star)
    if contexts is None:
        contexts = _node_contexts(model, config, ys)
    th = model.scale_theta(np.atleast_2d(np.asarray(theta1, dtype=float)))
    vec = _theta_flow(model.field, contexts, th, config, reverse=True) / model.theta_scale
    r = np.linalg.norm(vec, axis=1)
    safe = np.where(r > 0, r, 1.0)
    sign = np.where(r[:, None] > 0, vec / safe[:, None], 0.0)
    return RankResult(vec, r, sign)


def conditioning_contexts(model, y_star, config: OdeConfig | None = None):
    """Precompute the per-node contexts for repeated pushes/ranks at one y*."""
    config = (config or OdeConfig()).validate()
    _, ys = _scaled_obs(model, y_star)
    return _node_contexts(model, config, ys)


def joint_flow(model: VelocityModel, x0, config: OdeConfig | None = None,
               return_path=False):
    """Integrate the full joint field from standardized source rows ``x0``."""
    config = (config or OdeConfig()).validate()
    field, n = model.field, model.n

    def vel(x, t):
        y = x[:, :n]
        return np.concatenate([field.f(y, t), field.g(y, x[:, n:], t)], axis=1)

    return integrate(vel, x0, 0.0, 1.0, config, return_path=return_path)


def sample_joint(model: VelocityModel, num_samples, config: OdeConfig | None = None,
                 rng=None):
    """Joint (y, theta) draws in original units, shape (num, n + d)."""
    rng = np.random.default_rng() if rng is None else rng
    x0 = sample_source(model.source, int(num_samples), model.n, model.d, rng)
    x0[:, model.n:] *= model.theta_scale
    x1 = joint_flow(model, x0, config)
    return model.scaler.invert(x1)
